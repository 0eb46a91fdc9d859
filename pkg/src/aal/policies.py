"""Addition/deletion scoring policies and batch selection.

Scores are oriented so that larger means "more worth having labeled".
Addition takes the top of the ranking over the unlabeled pool; deletion
takes the bottom of the ranking over the labeled pool.

Policy strings::

    entropy | diversity | variance | jsd | greedy | random
    hybrid(greedy:32,variance:32)          # disjoint sub-batches, in order
    rank_ensemble(entropy:1,diversity:1)   # weighted sum of per-policy ranks
    entropy@rand2n                         # pick n uniformly from the top 2n
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, PreconditionError, UnsupportedOperation

BASE_KINDS = ("entropy", "diversity", "variance", "jsd", "greedy", "random")
COMPOSITE_KINDS = ("hybrid", "rank_ensemble")
RAND_FLAG = "@rand2n"

_NORM_TOL = 1e-6


# --- scalar scoring primitives -------------------------------------------------


def _check_distribution(p: np.ndarray) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a nonempty 1-d array")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > _NORM_TOL:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")


def entropy_score(prob) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(prob, dtype=np.float64)
    _check_distribution(p)
    return float(_entropy_rows(p[None, :])[0])


def diversity_score(feature, mean_feature) -> float:
    """Cosine distance ``1 - cos(feature, mean_feature)``, in [0, 2]."""
    f = np.asarray(feature, dtype=np.float64)
    m = np.asarray(mean_feature, dtype=np.float64)
    if f.shape != m.shape:
        raise ValueError("feature and mean feature differ in length")
    nf, nm = np.linalg.norm(f), np.linalg.norm(m)
    if nf == 0 or nm == 0:
        raise ValueError("cosine distance is undefined for a zero-norm vector")
    cos = float(f @ m) / (nf * nm)
    return 1.0 - min(1.0, max(-1.0, cos))


def mean_feature(family, params, training_ids, dataset) -> np.ndarray:
    """Average backbone feature over the labeled pool."""
    ids = np.asarray(list(training_ids), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("mean feature of an empty pool is undefined")
    return family.features(params, dataset.inputs(ids)).mean(axis=0)


def jsd_uncertainty(committee_probs) -> float:
    """Mean KL divergence from each member's distribution to the committee average."""
    probs = [np.asarray(p, dtype=np.float64) for p in committee_probs]
    if len(probs) < 2:
        raise ValueError("committee disagreement needs at least 2 members")
    if len({p.shape for p in probs}) != 1:
        raise ValueError("committee members disagree on the number of classes")
    for p in probs:
        _check_distribution(p)
    return float(_jsd_rows(np.stack(probs)[:, None, :])[0])


def variance_uncertainty(committee_predictions) -> float:
    """Population variance of the committee's predictions."""
    y = np.asarray(committee_predictions, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("committee variance needs at least 2 predictions")
    return float(np.var(y))


def greedy_score(family, committee, sample) -> float:
    """Committee-mean predicted affinity for one sample."""
    if family.task != "regression":
        raise UnsupportedOperation("greedy scoring targets affinity regression models")
    x = np.asarray(sample)[None, ...]
    return float(np.mean([family.predict(p, x)[0] for p in committee]))


def rank_ensemble(scores) -> np.ndarray:
    """Weighted sum of within-vector ranks (ascending, ties averaged).

    ``scores`` is a sequence of ``(vector, weight)`` pairs.
    """
    scores = list(scores)
    if not scores:
        raise ValueError("rank ensemble needs at least one component")
    n = len(np.asarray(scores[0][0]))
    total = np.zeros(n)
    for vec, weight in scores:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (n,):
            raise ValueError("rank ensemble components differ in length")
        if not weight > 0:
            raise ValueError("rank ensemble weights must be positive")
        total += weight * rankdata(vec, method="average")
    return total


# --- vectorized forms used by the policy layer --------------------------------


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def _jsd_rows(probs: np.ndarray) -> np.ndarray:
    """``probs`` has shape (C, n, K); returns n disagreement values."""
    mean = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs / mean), 0.0)
    return np.maximum(terms.sum(axis=-1).mean(axis=0), 0.0)


def _cosine_distance_rows(feats: np.ndarray, center: np.ndarray) -> np.ndarray:
    nf = np.linalg.norm(feats, axis=1)
    nc = np.linalg.norm(center)
    out = np.zeros(len(feats))
    ok = nf > 0
    if nc == 0:
        return out
    cos = (feats[ok] @ center) / (nf[ok] * nc)
    out[ok] = 1.0 - np.clip(cos, -1.0, 1.0)
    return out


# --- policy specs --------------------------------------------------------------


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    parts: tuple[tuple["PolicySpec", float], ...] = ()
    randomized_top2n: bool = False

    def __post_init__(self) -> None:
        if self.kind in BASE_KINDS:
            if self.parts:
                raise ConfigError(f"policy {self.kind!r} takes no components")
        elif self.kind in COMPOSITE_KINDS:
            if not self.parts:
                raise ConfigError(f"policy {self.kind!r} needs at least one component")
            for _, w in self.parts:
                if not w > 0:
                    raise ConfigError(f"{self.kind} component weights/counts must be positive")
                if self.kind == "hybrid" and w != int(w):
                    raise ConfigError("hybrid component counts must be integers")
        else:
            raise ConfigError(f"unknown policy kind {self.kind!r}")

    def __str__(self) -> str:
        text = self.kind
        if self.parts:
            inner = ",".join(f"{p}:{_fmt_num(w)}" for p, w in self.parts)
            text = f"{text}({inner})"
        return text + (RAND_FLAG if self.randomized_top2n else "")

    def base_kinds(self) -> set[str]:
        if not self.parts:
            return {self.kind}
        out: set[str] = set()
        for p, _ in self.parts:
            out |= p.base_kinds()
        return out

    def validate(self, task: str, committee_size: int, batch_size: int | None = None) -> None:
        """Check the policy can run on ``task`` with the given committee.

        ``batch_size`` is checked against hybrid counts (addition only).
        """
        kinds = self.base_kinds()
        if task == "classification" and kinds & {"variance", "greedy"}:
            raise ConfigError(f"policy {self}: variance/greedy need a regression task")
        if task == "regression" and kinds & {"entropy", "jsd"}:
            raise ConfigError(f"policy {self}: entropy/jsd need a classification task")
        if kinds & {"variance", "jsd"} and committee_size < 2:
            raise ConfigError(f"policy {self}: committee disagreement needs committee size >= 2")
        if batch_size is not None and self.kind == "hybrid":
            total = sum(int(w) for _, w in self.parts)
            if total != batch_size:
                raise ConfigError(f"hybrid counts sum to {total}, batch size is {batch_size}")


def _fmt_num(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)"
                    r"|(?P<flag>@rand2n)|(?P<punct>[(),:]))")


def parse_policy(text: str) -> PolicySpec:
    """Parse a policy string such as ``hybrid(greedy:32,variance:32)@rand2n``."""
    tokens: list[tuple[str, str]] = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"policy {text!r}: unexpected character at position {pos}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1

    i = 0

    def peek(value: str | None = None, kind: str | None = None) -> bool:
        if i >= len(tokens):
            return False
        k, v = tokens[i]
        return (kind is None or k == kind) and (value is None or v == value)

    def expect(value: str) -> None:
        nonlocal i
        if not peek(value):
            got = tokens[i][1] if i < len(tokens) else "end of input"
            raise ConfigError(f"policy {text!r}: expected {value!r}, got {got!r}")
        i += 1

    def spec() -> PolicySpec:
        nonlocal i
        if not peek(kind="name"):
            raise ConfigError(f"policy {text!r}: expected a policy name")
        name = tokens[i][1]
        i += 1
        parts: list[tuple[PolicySpec, float]] = []
        if peek("("):
            i += 1
            while True:
                sub = spec()
                expect(":")
                if not peek(kind="num"):
                    raise ConfigError(f"policy {text!r}: expected a number after ':'")
                parts.append((sub, float(tokens[i][1])))
                i += 1
                if peek(","):
                    i += 1
                    continue
                expect(")")
                break
        rand = False
        if peek(kind="flag"):
            i += 1
            rand = True
        return PolicySpec(name, tuple(parts), rand)

    result = spec()
    if i != len(tokens):
        raise ConfigError(f"policy {text!r}: trailing input {tokens[i][1]!r}")
    return result


# --- selection -----------------------------------------------------------------


def _ranked(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions sorted by descending score, ties by ascending id."""
    return np.lexsort((ids, -scores))


def select_batch(scores, candidates, n: int, randomized_top2n: bool = False, rng_seed=None) -> list[int]:
    """Ids of the ``n`` best-scored candidates, returned sorted.

    With ``randomized_top2n`` a uniform ``n``-subset of the best ``2n`` is
    drawn instead. If ``n`` reaches the candidate count, everything is
    returned (the caller treats that as pool exhaustion).
    """
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(list(candidates), dtype=np.int64)
    if scores.shape != ids.shape:
        raise ValueError("scores and candidates differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if n < 0:
        raise ValueError("batch size must be non-negative")
    if n == 0:
        return []
    if n >= len(ids):
        return sorted(int(i) for i in ids)
    order = _ranked(scores, ids)
    if randomized_top2n:
        pool = order[: 2 * n]
        rng = np.random.default_rng(rng_seed)
        chosen = pool[rng.choice(len(pool), size=n, replace=False)]
    else:
        chosen = order[:n]
    return sorted(int(i) for i in ids[chosen])


def select_deletion_batch(scores, labeled, n_d: int, rng_seed=None, randomized_top2n: bool = False) -> list[int]:
    """Ids of the ``n_d`` lowest-scored labeled samples, returned sorted."""
    labeled = list(labeled)
    if n_d < 0:
        raise ConfigError("deletion count must be non-negative")
    if n_d and n_d >= len(labeled):
        raise ConfigError(f"cannot delete {n_d} of {len(labeled)} labeled samples (pool would empty)")
    if n_d == 0:
        return []
    return select_batch(-np.asarray(scores, dtype=np.float64), labeled, n_d, randomized_top2n, rng_seed)


# --- policy evaluation against a trained committee -----------------------------


class ScoringContext:
    """Lazily computed committee outputs for one iteration.

    Predictions / class probabilities are computed once over the whole
    dataset and indexed per call; features are computed per request.
    """

    def __init__(self, family, committee, dataset, labeled_ids) -> None:
        if not committee:
            raise PreconditionError("scoring needs a trained committee")
        self.family = family
        self.committee = committee
        self.dataset = dataset
        self.labeled_ids = np.asarray(list(labeled_ids), dtype=np.int64)
        self._all_inputs = None
        self._preds = None
        self._probs = None
        self._centers = None

    def with_labeled(self, labeled_ids) -> ScoringContext:
        """Same committee outputs, diversity centered on a different labeled pool."""
        other = ScoringContext(self.family, self.committee, self.dataset, labeled_ids)
        other._all_inputs, other._preds, other._probs = self._all_inputs, self._preds, self._probs
        return other

    def _inputs(self):
        if self._all_inputs is None:
            self._all_inputs = self.dataset.inputs(np.arange(self.dataset.size))
        return self._all_inputs

    def member_predictions(self) -> np.ndarray:
        """(C, N) predictions over the whole dataset."""
        if self._preds is None:
            self._preds = np.stack([self.family.predict(p, self._inputs()) for p in self.committee])
        return self._preds

    def member_probs(self) -> np.ndarray:
        """(C, N, K) class probabilities over the whole dataset."""
        if self._probs is None:
            self._probs = np.stack([self.family.predict_proba(p, self._inputs()) for p in self.committee])
        return self._probs

    def mean_prediction(self) -> np.ndarray:
        return self.member_predictions().mean(axis=0)

    def centers(self) -> list[np.ndarray]:
        if self._centers is None:
            self._centers = [mean_feature(self.family, p, self.labeled_ids, self.dataset) for p in self.committee]
        return self._centers

    def diversity(self, ids: np.ndarray) -> np.ndarray:
        x = self.dataset.inputs(ids)
        out = np.zeros(len(ids))
        for params, center in zip(self.committee, self.centers()):
            out += _cosine_distance_rows(self.family.features(params, x), center)
        return out / len(self.committee)


def score(spec: PolicySpec, ctx: ScoringContext, ids, rng: np.random.Generator) -> np.ndarray:
    """Score vector for ``ids`` under ``spec`` (larger = more worth labeling)."""
    ids = np.asarray(ids, dtype=np.int64)
    kind = spec.kind
    task = ctx.family.task
    if kind == "random":
        return rng.random(len(ids))
    if kind == "greedy":
        if task != "regression":
            raise UnsupportedOperation("greedy scoring targets affinity regression models")
        return ctx.mean_prediction()[ids]
    if kind == "variance":
        if task != "regression":
            raise UnsupportedOperation("variance scoring needs a regression committee")
        if len(ctx.committee) < 2:
            raise ValueError("committee variance needs at least 2 members")
        return ctx.member_predictions()[:, ids].var(axis=0)
    if kind == "entropy":
        if task != "classification":
            raise UnsupportedOperation("entropy is only defined for classifiers")
        return _entropy_rows(ctx.member_probs()[:, ids].mean(axis=0))
    if kind == "jsd":
        if task != "classification":
            raise UnsupportedOperation("committee JSD is only defined for classifiers")
        if len(ctx.committee) < 2:
            raise ValueError("committee disagreement needs at least 2 members")
        return _jsd_rows(ctx.member_probs()[:, ids])
    if kind == "diversity":
        return ctx.diversity(ids)
    # hybrid scores combine like a rank ensemble weighted by the part counts
    return rank_ensemble((score(part, ctx, ids, rng), w) for part, w in spec.parts)


def select_additions(spec: PolicySpec, ctx: ScoringContext, candidates, n: int, rng: np.random.Generator) -> list[int]:
    """Choose ``n`` unlabeled ids to add.

    Hybrid policies fill their parts in order, each from the candidates the
    earlier parts left over.
    """
    remaining = np.asarray(sorted(candidates), dtype=np.int64)
    if n >= len(remaining):
        return [int(i) for i in remaining]
    if spec.kind != "hybrid":
        return select_batch(score(spec, ctx, remaining, rng), remaining, n,
                            spec.randomized_top2n, rng)
    chosen: list[int] = []
    for part, count in spec.parts:
        count = int(count)
        part_spec = part if not spec.randomized_top2n else _with_rand(part)
        picked = select_additions(part_spec, ctx, remaining, count, rng)
        chosen.extend(picked)
        remaining = np.setdiff1d(remaining, picked, assume_unique=True)
    return sorted(chosen)


def select_deletions(spec: PolicySpec, ctx: ScoringContext, labeled, n_d: int, rng: np.random.Generator) -> list[int]:
    """Choose ``n_d`` labeled ids to return to the unlabeled pool."""
    if n_d == 0:
        return []
    labeled = np.asarray(sorted(labeled), dtype=np.int64)
    return select_deletion_batch(score(spec, ctx, labeled, rng), labeled, n_d, rng, spec.randomized_top2n)


def _with_rand(spec: PolicySpec) -> PolicySpec:
    return PolicySpec(spec.kind, spec.parts, True)
