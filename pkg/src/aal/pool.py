"""Labeled/unlabeled partition of a dataset, with acquisition bookkeeping.

A :class:`PoolState` is an immutable snapshot. ``add_batch`` and
``delete_batch`` return new snapshots, so a state can be handed to scoring
code without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, ParseError, PreconditionError


@dataclass(frozen=True)
class DeletionEvent:
    sample_id: int
    deleted_at: int
    added_at: int


@dataclass(frozen=True)
class LabelRecord:
    sample: int
    value: float | int


@dataclass(frozen=True)
class PoolState:
    """Partition of ``range(size)`` into labeled and unlabeled ids.

    ``labeled`` maps sample id to the iteration it was (most recently) added,
    in insertion order. Treat it as read-only.
    """

    size: int
    labeled: Mapping[int, int]
    unlabeled: frozenset[int]
    iteration: int = 0
    deletions: tuple[DeletionEvent, ...] = field(default=(), repr=False)

    @property
    def labeled_ids(self) -> list[int]:
        return list(self.labeled)

    @property
    def n_labeled(self) -> int:
        return len(self.labeled)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unlabeled)

    def advance(self) -> PoolState:
        """Return the same partition with the iteration counter incremented."""
        return PoolState(self.size, self.labeled, self.unlabeled, self.iteration + 1, self.deletions)

    def check_invariants(self) -> None:
        lab = set(self.labeled)
        if len(lab) != len(self.labeled):
            raise AssertionError("duplicate labeled id")
        if lab & self.unlabeled:
            raise AssertionError("labeled and unlabeled overlap")
        if len(lab) + len(self.unlabeled) != self.size or (lab | self.unlabeled) != set(range(self.size)):
            raise AssertionError("partition does not cover the dataset")

    def to_text(self) -> str:
        lines = [f"# iteration={self.iteration}"]
        lines.extend(f"{sid}\t{t}" for sid, t in self.labeled.items())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, size: int) -> PoolState:
        rows = text.splitlines()
        if not rows or not rows[0].startswith("# iteration="):
            raise ParseError("missing '# iteration=<t>' header", line=1)
        try:
            iteration = int(rows[0].split("=", 1)[1])
        except ValueError:
            raise ParseError("bad iteration header", line=1) from None
        labeled: dict[int, int] = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row.strip():
                continue
            parts = row.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'sample_id<TAB>added_at_iteration'", line=lineno)
            try:
                sid, t = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError("non-integer field", line=lineno) from None
            if not 0 <= sid < size:
                raise ParseError(f"sample id {sid} out of range", line=lineno)
            if sid in labeled:
                raise ParseError(f"duplicate sample id {sid}", line=lineno)
            labeled[sid] = t
        unlabeled = frozenset(range(size)) - labeled.keys()
        return cls(size, labeled, unlabeled, iteration)


def init_pool(dataset_size: int, m0: int, rng_seed: int | np.random.Generator) -> PoolState:
    """Label ``m0`` ids drawn uniformly without replacement."""
    if dataset_size <= 0:
        raise ConfigError(f"dataset_size must be positive, got {dataset_size}")
    if m0 <= 0:
        raise ConfigError("M0 must be at least 1 (cold start needs a nonempty first batch)")
    if m0 > dataset_size:
        raise ConfigError(f"M0={m0} exceeds dataset size {dataset_size}")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(dataset_size, size=m0, replace=False)
    labeled = {int(i): 0 for i in np.sort(chosen)}
    unlabeled = frozenset(range(dataset_size)) - labeled.keys()
    return PoolState(dataset_size, labeled, unlabeled, 0)


def _as_ids(batch: Iterable[int]) -> list[int]:
    ids = sorted({int(i) for i in batch})
    return ids


def add_batch(pool: PoolState, batch: Iterable[int]) -> PoolState:
    ids = _as_ids(batch)
    for sid in ids:
        if sid not in pool.unlabeled:
            state = "already labeled" if sid in pool.labeled else "unknown"
            raise PreconditionError(f"cannot add sample {sid}: {state}")
    labeled = dict(pool.labeled)
    for sid in ids:
        labeled[sid] = pool.iteration
    return PoolState(pool.size, labeled, pool.unlabeled.difference(ids), pool.iteration, pool.deletions)


def delete_batch(pool: PoolState, batch: Iterable[int]) -> PoolState:
    ids = _as_ids(batch)
    for sid in ids:
        if sid not in pool.labeled:
            raise PreconditionError(f"cannot delete sample {sid}: not labeled")
    labeled = dict(pool.labeled)
    events = tuple(DeletionEvent(sid, pool.iteration, labeled.pop(sid)) for sid in ids)
    return PoolState(
        pool.size, labeled, pool.unlabeled.union(ids), pool.iteration, pool.deletions + events
    )


def query_labels(dataset, batch: Iterable[int]) -> list[LabelRecord]:
    """Reveal ground truth for ``batch``. Pure: no state is touched."""
    ids = _as_ids(batch)
    if not ids:
        return []
    values = dataset.labels(np.asarray(ids, dtype=np.int64))
    return [LabelRecord(sid, v.item()) for sid, v in zip(ids, values)]
