"""Capacity-bounded memory stream shared by the agents of one crew run."""

from __future__ import annotations

import json
import re
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

from .errors import EmptyContent

KINDS = ("tool-input", "action-input", "context", "task-output")
DEFAULT_CAPACITY = 4096
TRUNCATION_MARKER = "\n[... truncated ...]"

_TOKEN = re.compile(r"\w+")


def tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.casefold()))


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class MemoryRecord:
    id: int
    timestamp: float
    agent_role: str
    task_id: str
    kind: str
    content: str
    entities: tuple = field(default=())


class MemoryStore:
    """Append-only stream; the oldest record is evicted once capacity is exceeded."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY, clock: Callable[[], float] = time.time):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._records: deque[MemoryRecord] = deque()
        self._next_id = 1
        self._clock = clock

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[MemoryRecord]:
        return list(self._records)

    def store(self, agent_role: str, task_id: str, kind: str, content: str,
              entities: Iterable[str] = ()) -> int:
        if kind not in KINDS:
            raise ValueError(f"unknown memory kind {kind!r}")
        if not content or not content.strip():
            raise EmptyContent("memory records need nonempty content")
        rec = MemoryRecord(self._next_id, self._clock(), agent_role, task_id, kind, content, tuple(entities))
        self._next_id += 1
        self._records.append(rec)
        while len(self._records) > self.capacity:
            self._records.popleft()
        return rec.id

    def _filtered(self, kind=None, agent_role=None, task_id=None, entity=None) -> list[MemoryRecord]:
        out = []
        for r in self._records:
            if kind is not None and r.kind != kind:
                continue
            if agent_role is not None and r.agent_role != agent_role:
                continue
            if task_id is not None and r.task_id != task_id:
                continue
            if entity is not None and entity not in r.entities:
                continue
            out.append(r)
        return out

    def retrieve(self, query: str, k: int = 5, kind=None, agent_role=None, task_id=None,
                 entity=None) -> list[MemoryRecord]:
        """Top-k by 0.5 * recency + 0.5 * Jaccard token overlap; ties favour newer records.

        Recency is the record's id rescaled to [0, 1] over the matching records.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        cands = self._filtered(kind, agent_role, task_id, entity)
        if not cands:
            return []
        lo, hi = cands[0].id, cands[-1].id
        q = tokens(query)
        scored = []
        for r in cands:
            recency = 1.0 if hi == lo else (r.id - lo) / (hi - lo)
            scored.append((0.5 * recency + 0.5 * jaccard(q, tokens(r.content)), r.id, r))
        scored.sort(key=lambda t: (-t[0], -t[1]))
        return [r for _, _, r in scored[:k]]

    # views
    def short_term(self, task_id: str) -> list[MemoryRecord]:
        return self._filtered(task_id=task_id)

    def long_term(self) -> list[MemoryRecord]:
        return self.records

    def entity(self, name: str) -> list[MemoryRecord]:
        return self._filtered(entity=name)

    def task_output(self, task_id: str) -> MemoryRecord | None:
        found = self._filtered(kind="task-output", task_id=task_id)
        return found[-1] if found else None

    def build_context(self, context_task_ids: Iterable[str], budget: int = 8000) -> str:
        """Task outputs of the given tasks, in order, cut at ``budget`` characters."""
        if budget <= 0:
            raise ValueError("budget must be positive")
        parts = []
        for tid in context_task_ids:
            rec = self.task_output(tid)
            if rec is not None:
                parts.append(rec.content)
        text = "\n\n".join(parts)
        if len(text) > budget:
            text = text[:budget] + TRUNCATION_MARKER
        return text

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self._records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
