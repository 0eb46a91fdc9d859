"""Ground-truth datasets that double as simulated labeling oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

TSV_HEADER = ("drug_id", "protein_id", "score")


def _check_ids(ids, size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        bad = ids[(ids < 0) | (ids >= size)][0]
        raise IndexError(f"unknown sample id {int(bad)} (dataset size {size})")
    return ids


@dataclass(frozen=True, eq=False)
class AffinityDataset:
    """Drug x protein affinity matrix.

    Sample ids enumerate the present (non-NaN) entries. For generated data
    every entry is present and ``id = drug * n_proteins + protein``; for
    loaded tables ids follow file row order.
    """

    scores: np.ndarray
    pairs: np.ndarray
    drug_names: tuple[str, ...] = field(default=())
    protein_names: tuple[str, ...] = field(default=())
    task = "regression"

    def __post_init__(self) -> None:
        self.scores.setflags(write=False)
        self.pairs.setflags(write=False)

    @classmethod
    def from_dense(cls, scores: np.ndarray, **names) -> AffinityDataset:
        scores = np.asarray(scores, dtype=np.float64)
        n_d, n_p = scores.shape
        drugs, prots = np.divmod(np.arange(n_d * n_p), n_p)
        pairs = np.stack([drugs, prots], axis=1)
        pairs = pairs[~np.isnan(scores[drugs, prots])]
        return cls(scores.copy(), pairs, **names)

    @property
    def n_drugs(self) -> int:
        return self.scores.shape[0]

    @property
    def n_proteins(self) -> int:
        return self.scores.shape[1]

    @property
    def size(self) -> int:
        return len(self.pairs)

    def inputs(self, ids) -> np.ndarray:
        """(drug, protein) index pairs for ``ids``, shape (n, 2)."""
        return self.pairs[_check_ids(ids, self.size)]

    def labels(self, ids) -> np.ndarray:
        pairs = self.inputs(ids)
        return self.scores[pairs[:, 0], pairs[:, 1]]

    def all_labels(self) -> np.ndarray:
        return self.scores[self.pairs[:, 0], self.pairs[:, 1]]

    def sample_id(self, drug: int, protein: int) -> int:
        hit = np.flatnonzero((self.pairs[:, 0] == drug) & (self.pairs[:, 1] == protein))
        if not hit.size:
            raise KeyError(f"pair ({drug}, {protein}) not present")
        return int(hit[0])

    def to_tsv(self, path) -> None:
        drugs = self.drug_names or tuple(str(i) for i in range(self.n_drugs))
        prots = self.protein_names or tuple(str(i) for i in range(self.n_proteins))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(TSV_HEADER) + "\n")
            for (d, p), y in zip(self.pairs, self.all_labels()):
                fh.write(f"{drugs[d]}\t{prots[p]}\t{float(y)!r}\n")

    def descriptor(self) -> dict:
        return {"kind": "affinity", "n_drugs": self.n_drugs, "n_proteins": self.n_proteins, "samples": self.size}


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    features: np.ndarray
    targets: np.ndarray
    n_classes: int
    task = "classification"

    def __post_init__(self) -> None:
        if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.n_classes):
            raise ConfigError("labels must lie in [0, K)")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("feature rows must be finite")
        self.features.setflags(write=False)
        self.targets.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.targets)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def inputs(self, ids) -> np.ndarray:
        return self.features[_check_ids(ids, self.size)]

    def labels(self, ids) -> np.ndarray:
        return self.targets[_check_ids(ids, self.size)]

    def all_labels(self) -> np.ndarray:
        return self.targets

    def descriptor(self) -> dict:
        return {"kind": "classification", "samples": self.size, "n_features": self.n_features,
                "n_classes": self.n_classes}


def generate_bilinear_affinity(
    n_drugs: int, n_proteins: int, latent_rank: int, noise_std: float, rng_seed: int
) -> AffinityDataset:
    """``scores = U @ V.T + noise`` with standard normal factors."""
    if n_drugs <= 0 or n_proteins <= 0:
        raise ConfigError("n_drugs and n_proteins must be positive")
    if latent_rank < 1:
        raise ConfigError("latent_rank must be >= 1")
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    rng = np.random.default_rng(rng_seed)
    u = rng.standard_normal((n_drugs, latent_rank))
    v = rng.standard_normal((n_proteins, latent_rank))
    scores = u @ v.T
    if noise_std > 0:
        scores = scores + rng.normal(0.0, noise_std, size=scores.shape)
    return AffinityDataset.from_dense(scores)


def generate_blobs(
    n_classes: int,
    per_class: int,
    n_features: int,
    center_spread: float,
    cluster_std: float,
    rng_seed: int,
) -> ClassificationDataset:
    """Isotropic Gaussian clusters, one per class, centers ~ N(0, spread^2)."""
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1 or n_features < 1:
        raise ConfigError("per_class and n_features must be >= 1")
    if center_spread <= 0 or cluster_std < 0:
        raise ConfigError("center_spread must be > 0 and cluster_std >= 0")
    rng = np.random.default_rng(rng_seed)
    centers = rng.normal(0.0, center_spread, size=(n_classes, n_features))
    targets = np.repeat(np.arange(n_classes), per_class)
    x = centers[targets] + rng.normal(0.0, cluster_std, size=(len(targets), n_features))
    return ClassificationDataset(x, targets, n_classes)


def load_affinity_table(path) -> AffinityDataset:
    """Read a ``drug_id<TAB>protein_id<TAB>score`` table.

    Drug and protein names are densified to indices in order of first
    appearance. Pairs absent from the file are NaN in the score matrix.
    """
    drugs: dict[str, int] = {}
    prots: dict[str, int] = {}
    rows: list[tuple[int, int, float]] = []
    seen: dict[tuple[int, int], int] = {}
    with open(Path(path), encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if tuple(header.split("\t")) != TSV_HEADER:
            raise ParseError("expected header 'drug_id<TAB>protein_id<TAB>score'", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                raise ParseError("expected 3 tab-separated fields", line=lineno)
            try:
                score = float(parts[2])
            except ValueError:
                raise ParseError(f"non-numeric score {parts[2]!r}", line=lineno) from None
            if not np.isfinite(score):
                raise ParseError(f"non-finite score {parts[2]!r}", line=lineno)
            d = drugs.setdefault(parts[0], len(drugs))
            p = prots.setdefault(parts[1], len(prots))
            if (d, p) in seen:
                raise ParseError(
                    f"duplicate pair ({parts[0]}, {parts[1]}), first seen on line {seen[(d, p)]}",
                    line=lineno,
                )
            seen[(d, p)] = lineno
            rows.append((d, p, score))
    if not rows:
        raise ParseError("table has no data rows")
    scores = np.full((len(drugs), len(prots)), np.nan)
    pairs = np.array([(d, p) for d, p, _ in rows], dtype=np.int64)
    scores[pairs[:, 0], pairs[:, 1]] = [s for _, _, s in rows]
    return AffinityDataset(scores, pairs, tuple(drugs), tuple(prots))


def one_hot(index: int, width: int) -> np.ndarray:
    if not 0 <= index < width:
        raise IndexError(f"index {index} out of range for width {width}")
    out = np.zeros(width)
    out[index] = 1.0
    return out
