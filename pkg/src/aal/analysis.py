"""Post-hoc views of a trajectory: ranked affinity grid, deletion origins, label shift."""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .datasets import AffinityDataset
from .engine import TrajectoryLog
from .errors import UnsupportedOperation
from .metrics import checkpoint_kl


@dataclass(frozen=True)
class RankedGrid:
    """Drugs on x, proteins on y, each axis sorted by ascending mean affinity.

    The highest-affinity drug/protein sits at the largest coordinate, so
    strong pairs collect in the top-right corner.
    """

    drug_order: np.ndarray
    protein_order: np.ndarray
    cells: list[tuple[int, int, int, str]] = field(default_factory=list)

    @property
    def drug_rank(self) -> np.ndarray:
        return np.argsort(self.drug_order)

    @property
    def protein_rank(self) -> np.ndarray:
        return np.argsort(self.protein_order)

    def to_grid(self, drug: int, protein: int) -> tuple[int, int]:
        return int(self.drug_rank[drug]), int(self.protein_rank[protein])

    def from_grid(self, x: int, y: int) -> tuple[int, int]:
        return int(self.drug_order[x]), int(self.protein_order[y])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,grid_x,grid_y,event\n")
        for t, x, y, event in self.cells:
            buf.write(f"{t},{x},{y},{event}\n")
        return buf.getvalue()


def _ascending_order(means: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(len(means)), means))


def build_ranked_grid(dataset, log: TrajectoryLog) -> RankedGrid:
    if not isinstance(dataset, AffinityDataset):
        raise UnsupportedOperation("the ranked grid needs an affinity dataset")
    with np.errstate(all="ignore"):
        drug_means = np.nanmean(dataset.scores, axis=1)
        prot_means = np.nanmean(dataset.scores, axis=0)
    drug_means = np.nan_to_num(drug_means, nan=-np.inf)
    prot_means = np.nan_to_num(prot_means, nan=-np.inf)
    grid = RankedGrid(_ascending_order(drug_means), _ascending_order(prot_means))
    drug_rank, prot_rank = grid.drug_rank, grid.protein_rank
    for t, event, sid in log.events():
        d, p = dataset.pairs[sid]
        grid.cells.append((t, int(drug_rank[d]), int(prot_rank[p]), event))
    return grid


@dataclass(frozen=True)
class DeletionOriginGraph:
    """``edges[(m, n)] = s``: s samples deleted at iteration m had been added at n."""

    edges: dict[tuple[int, int], int]
    node_sizes: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.edges.values())

    def edges_csv(self) -> str:
        rows = "".join(f"{m},{n},{s}\n" for (m, n), s in sorted(self.edges.items()))
        return "deletion_iter,addition_iter,count\n" + rows

    def nodes_csv(self) -> str:
        rows = "".join(f"{n},{s}\n" for n, s in sorted(self.node_sizes.items()))
        return "iteration,deleted_later\n" + rows


def build_deletion_origin_graph(log: TrajectoryLog) -> DeletionOriginGraph:
    """One edge unit per delete event, pointing at the sample's latest addition.

    A sample may be added and deleted in the same iteration (deletion runs
    after addition), which yields an edge with m == n.
    """
    added_at: dict[int, int] = {}
    edges: Counter[tuple[int, int]] = Counter()
    for t, event, sid in log.events():
        if event == "add":
            added_at[sid] = t
        elif sid not in added_at:
            raise ValueError(f"malformed event stream: sample {sid} deleted at iteration {t} before any add")
        else:
            edges[(t, added_at.pop(sid))] += 1
    nodes: Counter[int] = Counter()
    for (_, n), s in edges.items():
        nodes[n] += s
    return DeletionOriginGraph(dict(edges), dict(nodes))


def checkpoint_rows(log: TrajectoryLog, checkpoints) -> list[int]:
    """Map fractions of the run length to record indices."""
    if not log.records:
        raise ValueError("empty trajectory")
    last = len(log.records) - 1
    out = []
    for f in checkpoints:
        f = float(f)
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"checkpoint fraction {f} outside [0, 1]")
        out.append(int(round(f * last)))
    return out


def distribution_shift_series(log: TrajectoryLog, checkpoints) -> list[float]:
    """KL(later || earlier) between label histograms at consecutive checkpoints.

    For affinity runs the histograms are quantile buckets of the affinity
    values rather than classes.
    """
    rows = checkpoint_rows(log, checkpoints)
    if len(rows) < 2:
        raise ValueError("need at least two checkpoints")
    hists = [log.records[i].histogram for i in rows]
    return [checkpoint_kl(hists[i + 1], hists[i]) for i in range(len(hists) - 1)]


def shift_csv(checkpoints, values) -> str:
    buf = io.StringIO()
    buf.write("from,to,kl\n")
    for i, kl in enumerate(values):
        buf.write(f"{checkpoints[i]},{checkpoints[i + 1]},{kl!r}\n")
    return buf.getvalue()


def features_csv(family, params, dataset, labeled_ids) -> str:
    """Backbone features of every sample, for external projection tools."""
    labeled = set(int(i) for i in labeled_ids)
    feats = family.features(params, dataset.inputs(np.arange(dataset.size)))
    buf = io.StringIO()
    buf.write("sample_id,labeled," + ",".join(f"f{j}" for j in range(feats.shape[1])) + "\n")
    for sid, row in enumerate(feats):
        buf.write(f"{sid},{int(sid in labeled)}," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
