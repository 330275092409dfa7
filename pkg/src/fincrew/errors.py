"""Exception hierarchy shared by every fincrew module."""


class FincrewError(Exception):
    """Base class for all library errors."""


# crew runtime
class CrewDefinitionError(FincrewError):
    pass


class UnknownTool(CrewDefinitionError):
    pass


class DuplicateRole(CrewDefinitionError):
    pass


class MissingManager(CrewDefinitionError):
    pass


class TaskCycle(CrewDefinitionError):
    pass


class EmptyCrew(CrewDefinitionError):
    pass


class PlaceholderMissing(FincrewError):
    pass


class AgentLoopExceeded(FincrewError):
    pass


class UnknownCoworker(FincrewError):
    pass


class EmptyOutputs(FincrewError):
    pass


class ToolError(FincrewError):
    """Raised by a tool. Non-fatal errors are fed back to the agent as an observation."""

    def __init__(self, message, fatal=False):
        super().__init__(message)
        self.fatal = fatal


# memory
class EmptyContent(FincrewError):
    pass


# gateway
class GatewayError(FincrewError):
    pass


class GatewayTransport(GatewayError):
    pass


class ReplayMiss(GatewayError):
    def __init__(self, fingerprint):
        super().__init__(f"no recorded response for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class MalformedResponse(GatewayError):
    pass


# tabular
class FileMissing(FincrewError):
    pass


class EmptyFile(FincrewError):
    pass


class RaggedRow(FincrewError):
    def __init__(self, line_number, expected, got):
        super().__init__(f"line {line_number}: expected {expected} fields, got {got}")
        self.line_number = line_number


class UnknownTarget(FincrewError):
    pass


class TooFewCompleteRows(FincrewError):
    pass


class MinorityTooSmall(FincrewError):
    pass


class SingleClass(FincrewError):
    pass


class KeyMissing(FincrewError):
    pass


class UnknownStatusSymbol(FincrewError):
    pass


# model lab
class NonBinaryTarget(FincrewError):
    pass


class MissingValuesPresent(FincrewError):
    pass


class UnknownHyperparam(FincrewError):
    pass


class ArityMismatch(FincrewError):
    pass


class SingleClassTruth(FincrewError):
    pass


class NoPositives(FincrewError):
    pass


class TooFewPerClass(FincrewError):
    pass


class EmptyGrid(FincrewError):
    pass


class MethodUnsupported(FincrewError):
    pass


class VersionMismatch(FincrewError):
    pass


class CorruptArtifact(FincrewError):
    pass


# crews
class InvalidRecipe(FincrewError):
    pass


class DataMissing(FincrewError):
    pass


class IncompleteCrewOutput(FincrewError):
    pass


class EmptyGuide(FincrewError):
    pass


class NoNumericColumns(FincrewError):
    pass


class RowOutOfRange(FincrewError):
    pass


class MissingSubReport(FincrewError):
    pass


class BadImbalance(FincrewError):
    pass


# cli
class CliError(FincrewError):
    pass


class UnknownCommand(CliError):
    pass


class MissingFlag(CliError):
    pass


class BadValue(CliError):
    pass
