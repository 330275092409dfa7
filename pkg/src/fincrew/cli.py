"""Command-line entry point.

Subcommands::

    fincrew eda --data FILE --target COL --output DIR
    fincrew model run --recipe NAME --seed N --output DIR [--mode live|replay|record --transcript FILE]
    fincrew mrm run --model-dir DIR --output DIR [--guide FILE]
    fincrew synth --seed N --output FILE.csv [--rows 5000 --imbalance 0.78 ...]
    fincrew replay verify --transcript FILE [--recipe synthetic --seed N --output DIR]

Every subcommand also takes ``--config FILE``, a flat ``key=value`` file whose
keys are the long flag names with dashes or underscores. Flags win over the
file. Exit status: 0 success, 1 validation found gaps, 2 error.
"""

from __future__ import annotations

import argparse
import filecmp
import json
import os
import sys
from dataclasses import dataclass, field

from .errors import BadValue, CliError, FincrewError, MissingFlag, UnknownCommand

MODES = ("live", "replay", "record")
UPSTREAMS = ("scripted", "http")

# key -> converter for values that are not plain strings
_TYPES = {
    "seed": int, "rows": int, "numeric": int, "categorical": int, "runs": int,
    "imbalance": float, "signal": float, "missing_rate": float,
    "shift_magnitude": float, "outlier_magnitude": float, "tolerance": float, "threshold": float,
}
_CHOICES = {"mode": MODES, "upstream": UPSTREAMS,
            "recipe": ("credit", "fraud", "card", "synthetic"),
            "shift_mode": ("add-fixed", "add-random", "multiply-fixed")}
# keys each command accepts (besides config)
_KEYS = {
    "eda": ("data", "target", "output"),
    "model run": ("recipe", "seed", "mode", "upstream", "transcript", "data", "application", "credit",
                  "variant", "output", "no_figures"),
    "mrm run": ("model_dir", "guide", "output", "seed", "mode", "upstream", "transcript", "shift_mode",
                "shift_magnitude", "outlier_magnitude", "tolerance", "threshold", "no_figures"),
    "synth": ("seed", "output", "rows", "numeric", "categorical", "imbalance", "signal", "missing_rate"),
    "replay verify": ("transcript", "recipe", "seed", "output", "runs", "guide"),
}
_REQUIRED = {
    "eda": ("data", "target", "output"),
    "model run": ("recipe", "seed", "output"),
    "mrm run": ("model_dir", "output"),
    "synth": ("seed", "output"),
    "replay verify": ("transcript",),
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def seed(self):
        return self.values.get("seed")

    @property
    def mode(self):
        return self.get("mode", "live")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message or "required: command" in message or "required: action" in message:
            raise UnknownCommand(message)
        raise BadValue(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fincrew", description="Agent crews for tabular credit modeling and model validation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value file; flags override it")

    def run_flags(sp):
        sp.add_argument("--mode", help="live, replay or record")
        sp.add_argument("--upstream", help="backend behind live/record: scripted (default) or http")
        sp.add_argument("--transcript", help="replay transcript (JSON lines)")
        sp.add_argument("--no-figures", dest="no_figures", action="store_true", default=None)

    sp = sub.add_parser("eda", help="profile a CSV")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--target")
    sp.add_argument("--output")

    model = sub.add_parser("model", help="modeling crew")
    msub = model.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = msub.add_parser("run", help="run a modeling recipe")
    common(sp)
    run_flags(sp)
    sp.add_argument("--recipe")
    sp.add_argument("--seed")
    sp.add_argument("--data", help="CSV for the credit, fraud or synthetic recipe")
    sp.add_argument("--application", help="application records (card recipe)")
    sp.add_argument("--credit", help="credit records (card recipe)")
    sp.add_argument("--variant", help="recipe variant, e.g. smote for fraud")
    sp.add_argument("--output")

    mrm = sub.add_parser("mrm", help="model risk management crew")
    rsub = mrm.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = rsub.add_parser("run", help="validate a finished modeling run")
    common(sp)
    run_flags(sp)
    sp.add_argument("--model-dir", dest="model_dir")
    sp.add_argument("--guide")
    sp.add_argument("--output")
    sp.add_argument("--seed")
    sp.add_argument("--shift-mode", dest="shift_mode")
    sp.add_argument("--shift-magnitude", dest="shift_magnitude")
    sp.add_argument("--outlier-magnitude", dest="outlier_magnitude")
    sp.add_argument("--tolerance")
    sp.add_argument("--threshold")

    sp = sub.add_parser("synth", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--seed")
    sp.add_argument("--output")
    sp.add_argument("--rows")
    sp.add_argument("--numeric")
    sp.add_argument("--categorical")
    sp.add_argument("--imbalance")
    sp.add_argument("--signal")
    sp.add_argument("--missing-rate", dest="missing_rate")

    replay = sub.add_parser("replay", help="replay transcripts")
    vsub = replay.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = vsub.add_parser("verify", help="check a transcript; with --recipe, replay the runs and compare outputs")
    common(sp)
    sp.add_argument("--transcript")
    sp.add_argument("--recipe")
    sp.add_argument("--seed")
    sp.add_argument("--output")
    sp.add_argument("--runs")
    sp.add_argument("--guide")
    return p


def read_config(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise BadValue(f"cannot read config file {path}: {exc.strerror}") from exc
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BadValue(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _convert(key, value):
    if value is None or key == "no_figures":
        return value
    conv = _TYPES.get(key)
    if conv is not None:
        try:
            return conv(value)
        except (TypeError, ValueError):
            raise BadValue(f"--{key.replace('_', '-')} expects {conv.__name__}, got {value!r}") from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise BadValue(f"--{key.replace('_', '-')} must be one of {', '.join(_CHOICES[key])}, got {value!r}")
    return value


def parse_cli(argv) -> RunConfig:
    ns = _parser().parse_args(list(argv))
    command = ns.command if not getattr(ns, "action", None) else f"{ns.command} {ns.action}"
    allowed = _KEYS[command]
    values = {}
    if ns.config:
        for k, v in read_config(ns.config).items():
            if k not in allowed:
                raise BadValue(f"config key {k!r} does not apply to {command!r}")
            values[k] = v
    for k in allowed:
        v = getattr(ns, k, None)
        if v is not None:
            values[k] = v
    if isinstance(values.get("no_figures"), str):
        values["no_figures"] = values["no_figures"].lower() in ("1", "true", "yes")
    values = {k: _convert(k, v) for k, v in values.items()}
    missing = [k for k in _REQUIRED[command] if values.get(k) is None]
    if missing:
        raise MissingFlag(f"{command} needs " + ", ".join(f"--{k.replace('_', '-')}" for k in missing))
    if values.get("mode") in ("replay", "record") and not values.get("transcript"):
        raise MissingFlag(f"--mode {values['mode']} needs --transcript")
    return RunConfig(command, values)


# commands --------------------------------------------------------------------

def _emit(rows, out=None) -> None:
    """Tab-delimited key/value lines on standard output."""
    out = out or sys.stdout
    for k, v in rows:
        if isinstance(v, float):
            v = repr(v)
        elif isinstance(v, (dict, list)):
            v = json.dumps(v, sort_keys=True)
        out.write(f"{k}\t{v}\n")


def _cmd_eda(cfg: RunConfig) -> int:
    from . import tabular as tb
    from .eda import render_eda_summary, run_eda, write_eda_report
    from .errors import DataMissing, FileMissing

    try:
        table = tb.load_csv(cfg.get("data"))
    except FileMissing as exc:
        raise DataMissing(str(exc)) from exc
    report = run_eda(table, cfg.get("target"))
    out = cfg.get("output")
    os.makedirs(out, exist_ok=True)
    write_eda_report(report, os.path.join(out, "eda_report.json"))
    text = render_eda_summary(report)
    with open(os.path.join(out, "eda_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    _emit([("rows", report.shape[0]), ("columns", report.shape[1]),
           ("report", os.path.join(out, "eda_report.json")), ("summary", os.path.join(out, "eda_summary.txt"))])
    return 0


def _recipe(cfg: RunConfig, output):
    from .modeling_crew import make_recipe

    paths = {k: cfg.get(k) for k in ("data", "application", "credit") if cfg.get(k)}
    return make_recipe(cfg.get("recipe"), output, paths, seed=cfg.seed, variant=cfg.get("variant"))


def _cmd_model_run(cfg: RunConfig) -> int:
    from .modeling_crew import run_recipe

    recipe = _recipe(cfg, cfg.get("output"))
    res = run_recipe(recipe, cfg.mode, cfg.get("transcript"), cfg.get("upstream", "scripted"),
                     figures=not cfg.get("no_figures", False))
    m = res.report.get("metrics") or {}
    rows = [("recipe", recipe.name), ("seed", recipe.seed), ("selected_family", res.report["selected_family"]),
            ("hyperparams", res.report["hyperparams"])]
    rows += [(k, m.get(k)) for k in ("accuracy", "precision", "recall", "f1", "auc", "capture_rate")]
    rows += [("sections", len(res.report["sections"])), ("gateway_calls", res.gateway_calls)]
    rows += [(f"artifact:{k}", v) for k, v in sorted(res.artifacts.items())]
    _emit(rows)
    return 0


def _mrm_config(cfg: RunConfig, model_dir, output):
    from .mrm import MrmConfig

    kw = {}
    for key, attr in (("shift_mode", "shift_mode"), ("shift_magnitude", "shift_magnitude"),
                      ("outlier_magnitude", "outlier_magnitude"), ("tolerance", "tolerance"),
                      ("threshold", "threshold")):
        if cfg.get(key) is not None:
            kw[attr] = cfg.get(key)
    return MrmConfig(model_dir, output, cfg.get("guide"), seed=cfg.seed, **kw)


def _cmd_mrm_run(cfg: RunConfig) -> int:
    from .mrm import run_mrm

    res = run_mrm(_mrm_config(cfg, cfg.get("model_dir"), cfg.get("output")), cfg.mode, cfg.get("transcript"),
                  cfg.get("upstream", "scripted"), figures=not cfg.get("no_figures", False))
    r = res.result
    rows = [("compliance", r["compliance"]["verdict"]), ("replication", r["replication"]["verdict"]),
            ("soundness", r["soundness"]["verdict"])]
    for variant, metrics in r["result"].items():
        rows += [(f"{variant}.{k}", v) for k, v in metrics.items()]
    rows += [("overall_verdict", res.verdict), ("gateway_calls", res.gateway_calls),
             ("report", os.path.join(cfg.get("output"), "mrm_report.md"))]
    _emit(rows)
    if r["compliance"]["verdict"] == "gaps-found":
        sys.stderr.write("compliance gaps: " + ", ".join(
            s["stage"] for s in r["compliance"]["stages"] if s["verdict"] != "pass") + "\n")
    return 0 if res.verdict == "pass" else 1


def _cmd_synth(cfg: RunConfig) -> int:
    from . import tabular as tb
    from .synthetic import generate_synthetic_dataset

    kw = {k: cfg.get(src) for src, k in (("rows", "n_rows"), ("numeric", "n_numeric"),
                                         ("categorical", "n_categorical"), ("imbalance", "imbalance"),
                                         ("signal", "signal_strength"), ("missing_rate", "missing_rate"))
          if cfg.get(src) is not None}
    table = generate_synthetic_dataset(seed=cfg.seed, **kw)
    out = cfg.get("output")
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    tb.write_csv(table, out)
    _emit([("rows", table.n_rows), ("columns", table.n_cols), ("output", out)])
    return 0


# files whose bytes must match between two replayed runs
MODEL_OUTPUTS = ("report.json", "eda_report.json", "eda_summary.txt", "fe_report.json", "schema.json",
                 "selection.json", "hyper_params.txt", "model.json", "metrics.csv", "evaluation.json",
                 "crew_documentation.txt", "train2.csv", "test2.csv")
MRM_OUTPUTS = ("mrm_result.json", "mrm_report.md", "compliance.json", "replication.json", "soundness.json",
               "outcome.json")


def _log_events(path) -> list:
    from .orchestration import strip_timestamps

    with open(path, encoding="utf-8") as fh:
        return strip_timestamps([json.loads(line) for line in fh if line.strip()])


def compare_runs(a, b, names) -> list[str]:
    """Names of structured outputs that differ between run directories ``a`` and ``b``.

    Run logs are compared with their timestamp fields removed.
    """
    diff = []
    for name in names:
        pa, pb = os.path.join(a, name), os.path.join(b, name)
        if not (os.path.exists(pa) and os.path.exists(pb)) or not filecmp.cmp(pa, pb, shallow=False):
            diff.append(name)
    la, lb = os.path.join(a, "run_log.jsonl"), os.path.join(b, "run_log.jsonl")
    if os.path.exists(la) or os.path.exists(lb):
        if not (os.path.exists(la) and os.path.exists(lb)) or _log_events(la) != _log_events(lb):
            diff.append("run_log.jsonl")
    return diff


def _cmd_replay_verify(cfg: RunConfig) -> int:
    from .gateway import load_transcript
    from .modeling_crew import run_recipe
    from .mrm import MrmConfig, run_mrm

    path = cfg.get("transcript")
    if not os.path.exists(path):
        raise MissingFlag(f"transcript {path} does not exist")
    entries = load_transcript(path)
    rows = [("transcript", path), ("entries", len(entries))]
    if not cfg.get("recipe"):
        _emit(rows)
        return 0
    if cfg.seed is None or not cfg.get("output"):
        raise MissingFlag("replaying a recipe needs --seed and --output")
    runs = max(2, cfg.get("runs", 2))
    dirs = []
    for i in range(1, runs + 1):
        d = os.path.join(cfg.get("output"), f"run{i}")
        model_dir, mrm_dir = os.path.join(d, "model"), os.path.join(d, "mrm")
        res = run_recipe(_recipe(cfg, model_dir), "replay", path, figures=False)
        mres = run_mrm(MrmConfig(model_dir, mrm_dir, cfg.get("guide")), "replay", path, figures=False)
        rows += [(f"run{i}.gateway_calls", res.gateway_calls + mres.gateway_calls),
                 (f"run{i}.overall_verdict", mres.verdict)]
        dirs.append((model_dir, mrm_dir))
    diffs = []
    for m, r in dirs[1:]:
        diffs += compare_runs(dirs[0][0], m, MODEL_OUTPUTS) + compare_runs(dirs[0][1], r, MRM_OUTPUTS)
    rows.append(("identical", not diffs))
    _emit(rows)
    if diffs:
        sys.stderr.write("replayed runs differ in: " + ", ".join(sorted(set(diffs))) + "\n")
        return 2
    return 0


COMMANDS = {"eda": _cmd_eda, "model run": _cmd_model_run, "mrm run": _cmd_mrm_run, "synth": _cmd_synth,
            "replay verify": _cmd_replay_verify}


def run_command(cfg: RunConfig) -> int:
    """Run a parsed command. Returns 0, 1 (validation gaps) or 2 (error)."""
    try:
        return COMMANDS[cfg.command](cfg)
    except FincrewError as exc:
        sys.stderr.write(f"fincrew: error: {type(exc).__name__}: {exc}\n")
    except OSError as exc:
        sys.stderr.write(f"fincrew: error: {exc}\n")
    return 2


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_cli(argv)
    except CliError as exc:
        sys.stderr.write(f"fincrew: {type(exc).__name__}: {exc}\n")
        return 2
    return run_command(cfg)


if __name__ == "__main__":
    sys.exit(main())
