"""The acquisition loop: train, score, add top-N_a, delete bottom-N_d, repeat.

Each iteration ``t >= 1`` scores with the committee trained at the end of
iteration ``t - 1``, adds to the labeled pool, deletes from it, then
retrains on the new pool and evaluates the primary metric. Row ``t`` of the
log therefore pairs the pool size after iteration ``t`` with the metric of
the model trained on exactly that pool.
"""

from __future__ import annotations

import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .datasets import AffinityDataset, ClassificationDataset
from .errors import AALError, ConfigError, ParseError, TrainingDiverged
from .learners import BilinearRegressor, SoftmaxClassifier, TrainConfig, train_committee
from .policies import PolicySpec, ScoringContext, parse_policy, select_additions, select_deletions
from .pool import PoolState, add_batch, delete_batch, init_pool

log = logging.getLogger(__name__)

# SeedSequence stream tags; one independent stream per kind of randomness
_INIT, _ADD, _DELETE, _TRAIN = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    m0: int = 64
    n_add: int = 64
    n_delete: int = 8
    max_iterations: int = 300
    target: float | None = None
    max_label_budget: int | None = None
    add_policy: PolicySpec = field(default_factory=lambda: parse_policy("hybrid(greedy:32,variance:32)"))
    del_policy: PolicySpec = field(default_factory=lambda: parse_policy("hybrid(greedy:32,variance:32)"))
    train: TrainConfig = field(default_factory=TrainConfig)
    committee_size: int = 5
    seed: int = 0
    metric_every: int = 1
    warmup: int = 0
    coverage_k: int = 1000
    embed_dim: int = 16
    hist_buckets: int = 10
    allow_shrink: bool = False

    def __post_init__(self) -> None:
        for name in ("add_policy", "del_policy"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, parse_policy(value))
        if self.m0 < 1:
            raise ConfigError("experiment.m0 must be >= 1")
        if self.n_add < 1:
            raise ConfigError("experiment.n_add must be >= 1")
        if self.n_delete < 0:
            raise ConfigError("experiment.n_delete must be >= 0")
        if self.n_delete >= self.n_add and not self.allow_shrink:
            raise ConfigError("experiment.n_delete must be < n_add (set allow_shrink to override)")
        if self.max_iterations < 0:
            raise ConfigError("experiment.max_iterations must be >= 0")
        if self.target is not None and not 0 < self.target <= 1:
            raise ConfigError("experiment.target must lie in (0, 1]")
        if self.max_label_budget is not None and self.max_label_budget < 1:
            raise ConfigError("experiment.max_label_budget must be >= 1")
        if self.committee_size < 1:
            raise ConfigError("experiment.committee_size must be >= 1")
        if self.metric_every < 1:
            raise ConfigError("experiment.metric_every must be >= 1")
        if self.warmup < 0:
            raise ConfigError("experiment.warmup must be >= 0")
        if self.coverage_k < 1:
            raise ConfigError("experiment.coverage_k must be >= 1")
        if self.hist_buckets < 1:
            raise ConfigError("experiment.hist_buckets must be >= 1")

    def validate_for(self, dataset) -> None:
        task = dataset.task
        self.add_policy.validate(task, self.committee_size, self.n_add)
        if self.n_delete:
            self.del_policy.validate(task, self.committee_size)
        if self.m0 > dataset.size:
            raise ConfigError(f"experiment.m0={self.m0} exceeds dataset size {dataset.size}")
        if task == "regression" and self.coverage_k > dataset.size:
            raise ConfigError(f"experiment.coverage_k={self.coverage_k} exceeds dataset size {dataset.size}")

    def to_dict(self) -> dict:
        return {
            "m0": self.m0, "n_add": self.n_add, "n_delete": self.n_delete,
            "max_iterations": self.max_iterations, "target": self.target,
            "max_label_budget": self.max_label_budget,
            "add_policy": str(self.add_policy), "del_policy": str(self.del_policy),
            "train": dict(self.train.__dict__), "committee_size": self.committee_size,
            "seed": self.seed, "metric_every": self.metric_every, "warmup": self.warmup,
            "coverage_k": self.coverage_k, "embed_dim": self.embed_dim,
            "hist_buckets": self.hist_buckets, "allow_shrink": self.allow_shrink,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    labeled_size: int
    metric: float | None
    added: tuple[int, ...]
    deleted: tuple[int, ...]
    histogram: tuple[int, ...]
    wall_ms: float = 0.0


@dataclass
class TrajectoryLog:
    task: str
    records: list[IterationRecord] = field(default_factory=list)
    complete: bool = True
    stop_reason: str = ""
    exhausted: bool = False
    error: str | None = None
    committee: list | None = field(default=None, repr=False, compare=False)

    # --- views ---

    def events(self) -> list[tuple[int, str, int]]:
        out = []
        for rec in self.records:
            out.extend((rec.iteration, "add", sid) for sid in rec.added)
            out.extend((rec.iteration, "delete", sid) for sid in rec.deleted)
        return out

    def metric_series(self) -> list[float | None]:
        return [r.metric for r in self.records]

    def first_reaching(self, target: float) -> int | None:
        """Labeled-pool size at the first row whose metric reaches ``target``."""
        for rec in self.records:
            if rec.metric is not None and rec.metric >= target:
                return rec.labeled_size
        return None

    def replay(self, size: int) -> PoolState:
        """Rebuild the final pool from the event stream."""
        labeled: dict[int, int] = {}
        last = 0
        for t, event, sid in self.events():
            if event == "add":
                if sid in labeled:
                    raise ValueError(f"event stream adds {sid} twice at iteration {t}")
                labeled[sid] = t
            else:
                if sid not in labeled:
                    raise ValueError(f"event stream deletes unlabeled {sid} at iteration {t}")
                del labeled[sid]
            last = t
        if self.records:
            last = self.records[-1].iteration
        return PoolState(size, labeled, frozenset(range(size)) - labeled.keys(), last)

    # --- serialization (deterministic; wall time lives in timing.csv) ---

    def iterations_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,labeled_size,metric,n_added,n_deleted\n")
        for r in self.records:
            m = "" if r.metric is None else repr(float(r.metric))
            buf.write(f"{r.iteration},{r.labeled_size},{m},{len(r.added)},{len(r.deleted)}\n")
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,event,sample_id\n")
        for t, event, sid in self.events():
            buf.write(f"{t},{event},{sid}\n")
        return buf.getvalue()

    def histograms_csv(self) -> str:
        buf = io.StringIO()
        width = len(self.records[0].histogram) if self.records else 0
        buf.write("iteration," + ",".join(f"bin{i}" for i in range(width)) + "\n")
        for r in self.records:
            buf.write(f"{r.iteration}," + ",".join(str(c) for c in r.histogram) + "\n")
        return buf.getvalue()

    def timing_csv(self) -> str:
        return "iteration,wall_ms\n" + "".join(f"{r.iteration},{r.wall_ms:.3f}\n" for r in self.records)

    def status(self) -> dict:
        return {"task": self.task, "complete": self.complete, "stop_reason": self.stop_reason,
                "exhausted": self.exhausted, "error": self.error}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "iterations.csv").write_text(self.iterations_csv())
        (out / "events.csv").write_text(self.events_csv())
        (out / "histograms.csv").write_text(self.histograms_csv())
        (out / "timing.csv").write_text(self.timing_csv())
        (out / "status.json").write_text(json.dumps(self.status(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, run_dir) -> TrajectoryLog:
        run = Path(run_dir)
        for name in LOG_FILES:
            if not (run / name).is_file():
                raise FileNotFoundError(f"incomplete log: missing {run / name}")
        status = json.loads((run / "status.json").read_text())
        rows = _read_csv(run / "iterations.csv")
        added: dict[int, list[int]] = {}
        deleted: dict[int, list[int]] = {}
        for lineno, row in enumerate(_read_csv(run / "events.csv"), start=2):
            try:
                t, sid = int(row["iteration"]), int(row["sample_id"])
            except (KeyError, ValueError):
                raise ParseError("bad events row", line=lineno) from None
            target = {"add": added, "delete": deleted}.get(row["event"])
            if target is None:
                raise ParseError(f"unknown event {row['event']!r}", line=lineno)
            target.setdefault(t, []).append(sid)
        hists = {int(r["iteration"]): tuple(int(v) for k, v in r.items() if k != "iteration")
                 for r in _read_csv(run / "histograms.csv")}
        timing = {}
        if (run / "timing.csv").is_file():
            timing = {int(r["iteration"]): float(r["wall_ms"]) for r in _read_csv(run / "timing.csv")}
        records = []
        for row in rows:
            t = int(row["iteration"])
            records.append(IterationRecord(
                t, int(row["labeled_size"]), float(row["metric"]) if row["metric"] else None,
                tuple(added.get(t, ())), tuple(deleted.get(t, ())), hists.get(t, ()), timing.get(t, 0.0),
            ))
        return cls(status["task"], records, status["complete"], status["stop_reason"],
                   status["exhausted"], status.get("error"))


LOG_FILES = ("iterations.csv", "events.csv", "histograms.csv", "status.json")


def _read_csv(path: Path) -> list[dict[str, str]]:
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- helpers -------------------------------------------------------------------


def make_family(dataset, config: ExperimentConfig):
    if isinstance(dataset, AffinityDataset):
        return BilinearRegressor(dataset.n_drugs, dataset.n_proteins, config.embed_dim)
    if isinstance(dataset, ClassificationDataset):
        return SoftmaxClassifier(dataset.n_features, dataset.n_classes)
    raise ConfigError(f"unsupported dataset type {type(dataset).__name__}")


class LabelBinner:
    """Label histogram of a set of ids: class counts, or affinity quantile buckets."""

    def __init__(self, dataset, buckets: int = 10) -> None:
        self.dataset = dataset
        if dataset.task == "classification":
            self.width = dataset.n_classes
            self._bins = np.asarray(dataset.all_labels(), dtype=np.int64)
        else:
            values = dataset.all_labels()
            edges = np.quantile(values, np.linspace(0, 1, buckets + 1)[1:-1])
            self.width = buckets
            self._bins = np.searchsorted(edges, values, side="right")

    def bin_of(self, ids) -> np.ndarray:
        return self._bins[np.asarray(ids, dtype=np.int64)]

    def histogram(self, ids) -> tuple[int, ...]:
        counts = np.bincount(self.bin_of(list(ids)), minlength=self.width)
        return tuple(int(c) for c in counts)


def _stream(seed: int, tag: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag, *extra])


def _train_seed(seed: int, iteration: int) -> int:
    return int(_stream(seed, _TRAIN, iteration).generate_state(1)[0]) & 0x7FFFFFFF


def _train(family, dataset, pool: PoolState, config: ExperimentConfig, iteration: int, previous):
    ids = np.asarray(pool.labeled_ids, dtype=np.int64)
    x = dataset.inputs(ids)
    y = dataset.labels(ids)
    init = previous if config.train.retrain_mode == "warm_start" else None
    return train_committee(family, x, y, config.train, config.committee_size,
                           _train_seed(config.seed, iteration), init=init)


def evaluate(ctx: ScoringContext, dataset, config: ExperimentConfig) -> float:
    """Primary metric: top-k coverage (regression) or accuracy (classification)."""
    if dataset.task == "regression":
        return metrics.coverage_score(ctx.mean_prediction(), dataset.all_labels(), config.coverage_k)
    predicted = ctx.member_probs().mean(axis=0).argmax(axis=1)
    return metrics.accuracy(predicted, dataset.all_labels())


def _wants_metric(config: ExperimentConfig, t: int) -> bool:
    return t % config.metric_every == 0 or t == config.max_iterations


# --- main loop -----------------------------------------------------------------


def run_experiment(dataset, config: ExperimentConfig) -> TrajectoryLog:
    """Run the add/delete acquisition loop until a stop criterion fires."""
    config.validate_for(dataset)
    family = make_family(dataset, config)
    binner = LabelBinner(dataset, config.hist_buckets)
    add_rng = np.random.default_rng(_stream(config.seed, _ADD))
    del_rng = np.random.default_rng(_stream(config.seed, _DELETE))
    trajectory = TrajectoryLog(dataset.task)

    start = time.perf_counter()
    pool = init_pool(dataset.size, config.m0, np.random.default_rng(_stream(config.seed, _INIT)))
    initial = tuple(pool.labeled_ids)
    if config.max_iterations == 0:
        trajectory.records.append(IterationRecord(0, pool.n_labeled, None, initial, (),
                                                  binner.histogram(initial), _ms(start)))
        trajectory.stop_reason = "max_iterations"
        return trajectory

    try:
        committee = _train(family, dataset, pool, config, 0, None)
    except TrainingDiverged as exc:
        return _abort(trajectory, exc)
    ctx = ScoringContext(family, committee, dataset, pool.labeled_ids)
    metric = evaluate(ctx, dataset, config)
    trajectory.records.append(IterationRecord(0, pool.n_labeled, metric, initial, (),
                                              binner.histogram(initial), _ms(start)))
    if _stop(trajectory, config, metric, pool):
        trajectory.committee = committee
        return trajectory

    for t in range(1, config.max_iterations + 1):
        start = time.perf_counter()
        if not pool.unlabeled:
            trajectory.exhausted = True
            trajectory.stop_reason = "pool_exhausted"
            break
        pool = pool.advance()

        if len(pool.unlabeled) <= config.n_add:
            added = sorted(pool.unlabeled)
            trajectory.exhausted = True
        else:
            added = select_additions(config.add_policy, ctx, pool.unlabeled, config.n_add, add_rng)
        pool = add_batch(pool, added)

        deleted: list[int] = []
        if config.n_delete and t > config.warmup:
            n_d = min(config.n_delete, pool.n_labeled - 1)
            del_ctx = ctx.with_labeled(pool.labeled_ids)
            deleted = select_deletions(config.del_policy, del_ctx, pool.labeled_ids, n_d, del_rng)
            pool = delete_batch(pool, deleted)

        try:
            committee = _train(family, dataset, pool, config, t, committee)
        except TrainingDiverged as exc:
            trajectory.records.append(IterationRecord(t, pool.n_labeled, None, tuple(added),
                                                      tuple(deleted), binner.histogram(pool.labeled_ids),
                                                      _ms(start)))
            return _abort(trajectory, exc)
        ctx = ScoringContext(family, committee, dataset, pool.labeled_ids)
        metric = evaluate(ctx, dataset, config) if _wants_metric(config, t) else None
        trajectory.records.append(IterationRecord(t, pool.n_labeled, metric, tuple(added), tuple(deleted),
                                                  binner.histogram(pool.labeled_ids), _ms(start)))
        if _stop(trajectory, config, metric, pool):
            break
    else:
        trajectory.stop_reason = "max_iterations"
    trajectory.committee = committee
    return trajectory


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def _abort(trajectory: TrajectoryLog, exc: AALError) -> TrajectoryLog:
    log.error("training diverged: %s", exc)
    trajectory.complete = False
    trajectory.stop_reason = "diverged"
    trajectory.error = str(exc)
    return trajectory


def _stop(trajectory: TrajectoryLog, config: ExperimentConfig, metric, pool: PoolState) -> bool:
    if config.target is not None and metric is not None and metric >= config.target:
        trajectory.stop_reason = "target_reached"
        return True
    if config.max_label_budget is not None and pool.n_labeled >= config.max_label_budget:
        trajectory.stop_reason = "label_budget"
        return True
    if trajectory.exhausted:
        trajectory.stop_reason = "pool_exhausted"
        return True
    return False


def run_active_learning(dataset, config: ExperimentConfig) -> TrajectoryLog:
    """Plain add-only active learning, written independently of the deletion loop.

    Serves as the reference that ``run_experiment`` must match when
    ``n_delete == 0``.
    """
    config.validate_for(dataset)
    family = make_family(dataset, config)
    binner = LabelBinner(dataset, config.hist_buckets)
    rng = np.random.default_rng(_stream(config.seed, _ADD))
    trajectory = TrajectoryLog(dataset.task)

    pool = init_pool(dataset.size, config.m0, np.random.default_rng(_stream(config.seed, _INIT)))
    labeled = list(pool.labeled_ids)
    unlabeled = set(pool.unlabeled)

    def record(t, added, metric):
        trajectory.records.append(IterationRecord(t, len(labeled), metric, tuple(added), (),
                                                  binner.histogram(labeled)))

    if config.max_iterations == 0:
        record(0, labeled, None)
        trajectory.stop_reason = "max_iterations"
        return trajectory

    committee = None
    for t in range(0, config.max_iterations + 1):
        if t > 0:
            if not unlabeled:
                trajectory.exhausted = True
                trajectory.stop_reason = "pool_exhausted"
                return trajectory
            if len(unlabeled) <= config.n_add:
                added = sorted(unlabeled)
                trajectory.exhausted = True
            else:
                added = select_additions(config.add_policy, ctx, unlabeled, config.n_add, rng)
            labeled.extend(added)
            unlabeled.difference_update(added)
        else:
            added = list(labeled)
        ids = np.asarray(labeled, dtype=np.int64)
        init = committee if config.train.retrain_mode == "warm_start" else None
        committee = train_committee(family, dataset.inputs(ids), dataset.labels(ids), config.train,
                                    config.committee_size, _train_seed(config.seed, t), init=init)
        ctx = ScoringContext(family, committee, dataset, labeled)
        metric = evaluate(ctx, dataset, config) if (t == 0 or _wants_metric(config, t)) else None
        record(t, added, metric)
        if config.target is not None and metric is not None and metric >= config.target:
            trajectory.stop_reason = "target_reached"
            return trajectory
        if config.max_label_budget is not None and len(labeled) >= config.max_label_budget:
            trajectory.stop_reason = "label_budget"
            return trajectory
        if trajectory.exhausted:
            trajectory.stop_reason = "pool_exhausted"
            return trajectory
    trajectory.stop_reason = "max_iterations"
    return trajectory


def run_random_baseline(dataset, config: ExperimentConfig) -> TrajectoryLog:
    """Uniform random additions, no deletion; the model is still trained for metrics."""
    return run_experiment(dataset, replace(config, add_policy=parse_policy("random"), n_delete=0))


def run_greedy_baseline(dataset, config: ExperimentConfig) -> TrajectoryLog:
    return run_experiment(dataset, replace(config, add_policy=parse_policy("greedy"), n_delete=0))


@dataclass
class SummaryRow:
    iteration: int
    labeled_size: float
    mean: float
    std: float
    n_active: int


def _run_one(args):
    dataset, config = args
    return run_experiment(dataset, config)


def run_replication(dataset, config: ExperimentConfig, n_runs: int, workers: int = 1):
    """Run ``n_runs`` experiments with seeds ``seed + i``; summarize the metric per iteration.

    Runs that stopped early contribute their last metric to later iterations
    (a run that reached its target keeps it). ``n_active`` counts runs that
    actually logged that iteration.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    configs = [replace(config, seed=config.seed + i) for i in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_runs)) as pool:
            logs = list(pool.map(_run_one, [(dataset, c) for c in configs]))
    else:
        logs = [run_experiment(dataset, c) for c in configs]
    return logs, summarize(logs)


def summarize(logs: list[TrajectoryLog]) -> list[SummaryRow]:
    length = max(len(lg.records) for lg in logs)
    rows = []
    for i in range(length):
        values, sizes, active = [], [], 0
        for lg in logs:
            if i < len(lg.records):
                active += 1
            recs = lg.records[: i + 1]
            metric = next((r.metric for r in reversed(recs) if r.metric is not None), None)
            if metric is not None:
                values.append(metric)
            sizes.append(recs[-1].labeled_size)
        arr = np.asarray(values, dtype=np.float64)
        rows.append(SummaryRow(
            i, float(np.mean(sizes)),
            float(arr.mean()) if arr.size else float("nan"),
            float(arr.std()) if arr.size else float("nan"),
            active,
        ))
    return rows


def summary_csv(rows: list[SummaryRow]) -> str:
    out = "iteration,labeled_size_mean,metric_mean,metric_std,n_active\n"
    for r in rows:
        out += f"{r.iteration},{r.labeled_size!r},{r.mean!r},{r.std!r},{r.n_active}\n"
    return out
