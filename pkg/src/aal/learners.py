"""Small numpy learners with analytic gradients, and committee training.

Parameters are plain ``dict[str, np.ndarray]``. A learner family object
holds only shapes; every method takes the parameter dict explicitly, so
fitted parameters can be shared freely between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, InsufficientData, TrainingDiverged, UnsupportedOperation

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    retrain_mode: Literal["from_scratch", "warm_start"] = "from_scratch"
    validation_fraction: float = 0.2
    momentum: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("train.max_epochs must be >= 0")
        if self.patience < 0 or (self.max_epochs > 0 and self.patience > self.max_epochs):
            raise ConfigError("train.patience must satisfy 0 <= patience <= max_epochs")
        if self.retrain_mode not in ("from_scratch", "warm_start"):
            raise ConfigError(f"train.retrain_mode: unknown mode {self.retrain_mode!r}")
        # 0 disables the held-out split: early stopping then watches training loss.
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("train.validation_fraction must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("train.momentum must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("train.grad_clip must be positive when set")


class BilinearRegressor:
    """Drug/protein embedding model scored by a dot product.

    The drug index goes through three affine layers (ReLU between them,
    hidden widths ``embed_dim``); the protein index through one affine
    layer. Both inputs are one-hot, so the first layer of each encoder is a
    row lookup. Targets are standardized with a shift/scale fixed at
    initialization; ``predict`` undoes it.
    """

    task = "regression"
    trainable = ("d_w1", "d_b1", "d_w2", "d_b2", "d_w3", "d_b3", "p_w", "p_b")

    def __init__(self, n_drugs: int, n_proteins: int, embed_dim: int = 16) -> None:
        if min(n_drugs, n_proteins, embed_dim) < 1:
            raise ConfigError("n_drugs, n_proteins and embed_dim must be >= 1")
        self.n_drugs = n_drugs
        self.n_proteins = n_proteins
        self.embed_dim = embed_dim

    def init_params(self, rng: np.random.Generator, targets: np.ndarray | None = None) -> Params:
        e = self.embed_dim
        he = np.sqrt(2.0 / e)
        params = {
            "d_w1": rng.normal(0.0, 1.0, (self.n_drugs, e)),
            "d_b1": np.zeros(e),
            "d_w2": rng.normal(0.0, he, (e, e)),
            "d_b2": np.zeros(e),
            "d_w3": rng.normal(0.0, np.sqrt(1.0 / e), (e, e)),
            "d_b3": np.zeros(e),
            "p_w": rng.normal(0.0, np.sqrt(1.0 / e), (self.n_proteins, e)),
            "p_b": np.zeros(e),
        }
        shift, scale = 0.0, 1.0
        if targets is not None and len(targets):
            shift = float(np.mean(targets))
            sd = float(np.std(targets))
            scale = sd if sd > 1e-12 else 1.0
        params["y_shift"] = np.array(shift)
        params["y_scale"] = np.array(scale)
        return params

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64).reshape(-1, 2)
        if x.size and (
            x[:, 0].min() < 0 or x[:, 0].max() >= self.n_drugs
            or x[:, 1].min() < 0 or x[:, 1].max() >= self.n_proteins
        ):
            raise IndexError("drug or protein index out of range")
        return x

    def _encode(self, params: Params, x: np.ndarray):
        a1 = params["d_w1"][x[:, 0]] + params["d_b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ params["d_w2"] + params["d_b2"]
        h2 = np.maximum(a2, 0.0)
        drug = h2 @ params["d_w3"] + params["d_b3"]
        prot = params["p_w"][x[:, 1]] + params["p_b"]
        return drug, prot, (h1, h2)

    def features(self, params: Params, x) -> np.ndarray:
        drug, prot, _ = self._encode(params, self._check(x))
        return np.concatenate([drug, prot], axis=1)

    def predict(self, params: Params, x) -> np.ndarray:
        drug, prot, _ = self._encode(params, self._check(x))
        return params["y_shift"] + params["y_scale"] * np.einsum("ij,ij->i", drug, prot)

    def predict_proba(self, params: Params, x) -> np.ndarray:
        raise UnsupportedOperation("predict_proba is undefined for a regression model")

    def loss(self, params: Params, x, y) -> float:
        x = self._check(x)
        drug, prot, _ = self._encode(params, x)
        t = (np.asarray(y, dtype=np.float64) - params["y_shift"]) / params["y_scale"]
        r = np.einsum("ij,ij->i", drug, prot) - t
        return float(np.mean(r * r))

    def loss_and_grad(self, params: Params, x, y) -> tuple[float, Params]:
        """Mean squared error in standardized units and its gradient."""
        x = self._check(x)
        n = len(x)
        drug, prot, (h1, h2) = self._encode(params, x)
        t = (np.asarray(y, dtype=np.float64) - params["y_shift"]) / params["y_scale"]
        r = np.einsum("ij,ij->i", drug, prot) - t
        loss = float(np.mean(r * r))
        g = (2.0 / n) * r[:, None]
        g_drug = g * prot
        g_prot = g * drug
        grads: Params = {}
        grads["d_w3"] = h2.T @ g_drug
        grads["d_b3"] = g_drug.sum(axis=0)
        g2 = (g_drug @ params["d_w3"].T) * (h2 > 0)
        grads["d_w2"] = h1.T @ g2
        grads["d_b2"] = g2.sum(axis=0)
        g1 = (g2 @ params["d_w2"].T) * (h1 > 0)
        grads["d_w1"] = np.zeros_like(params["d_w1"])
        np.add.at(grads["d_w1"], x[:, 0], g1)
        grads["d_b1"] = g1.sum(axis=0)
        grads["p_w"] = np.zeros_like(params["p_w"])
        np.add.at(grads["p_w"], x[:, 1], g_prot)
        grads["p_b"] = g_prot.sum(axis=0)
        return loss, grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


class SoftmaxClassifier:
    """Multinomial logistic regression; the backbone is the identity."""

    task = "classification"
    trainable = ("w", "b")

    def __init__(self, n_features: int, n_classes: int) -> None:
        if n_features < 1 or n_classes < 2:
            raise ConfigError("need n_features >= 1 and n_classes >= 2")
        self.n_features = n_features
        self.n_classes = n_classes

    def init_params(self, rng: np.random.Generator, targets: np.ndarray | None = None) -> Params:
        return {
            "w": rng.normal(0.0, 0.01, (self.n_classes, self.n_features)),
            "b": np.zeros(self.n_classes),
        }

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise IndexError(f"expected {self.n_features} features, got {x.shape[1]}")
        return x

    def logits(self, params: Params, x) -> np.ndarray:
        return self._check(x) @ params["w"].T + params["b"]

    def predict_proba(self, params: Params, x) -> np.ndarray:
        return _softmax(self.logits(params, x))

    def predict(self, params: Params, x) -> np.ndarray:
        return np.argmax(self.logits(params, x), axis=1)

    def features(self, params: Params, x) -> np.ndarray:
        return self._check(x).copy()

    def loss(self, params: Params, x, y) -> float:
        p = self.predict_proba(params, x)
        y = np.asarray(y, dtype=np.int64)
        return float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300))))

    def loss_and_grad(self, params: Params, x, y) -> tuple[float, Params]:
        """Mean cross-entropy and its gradient."""
        x = self._check(x)
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        p = _softmax(x @ params["w"].T + params["b"])
        rows = np.arange(n)
        loss = float(-np.mean(np.log(np.maximum(p[rows, y], 1e-300))))
        g = p.copy()
        g[rows, y] -= 1.0
        g /= n
        return loss, {"w": g.T @ x, "b": g.sum(axis=0)}


def copy_params(params: Params) -> Params:
    return {k: np.array(v, copy=True) for k, v in params.items()}


def _all_finite(params: Params) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.values())


# overflow is caught explicitly below and surfaced as TrainingDiverged
@np.errstate(over="ignore", invalid="ignore")
def fit(
    family,
    x,
    y,
    config: TrainConfig,
    init: Params | None = None,
    rng_seed: int = 0,
    history: list[float] | None = None,
) -> Params:
    """Mini-batch SGD with early stopping; returns the best-validation parameters.

    Optional momentum and global-norm gradient clipping come from ``config``.

    A fraction ``config.validation_fraction`` of the samples is held out
    (resampled from ``rng_seed``). Training stops once the held-out loss has
    not improved for ``config.patience`` epochs. If ``history`` is given, the
    held-out loss before training and after each epoch is appended to it.
    """
    y = np.asarray(y)
    n = len(y)
    warm = config.retrain_mode == "warm_start"
    if warm and init is None:
        raise ConfigError("warm_start training requires initial parameters")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    n_val = 0 if config.validation_fraction == 0 else max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 2:
        raise InsufficientData(f"{n} labeled samples leave {n - n_val} for training (need >= 2)")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if not n_val:
        val_idx = train_idx
    x_all = np.asarray(x)
    x_val, y_val = x_all[val_idx], y[val_idx]

    params = copy_params(init) if warm else family.init_params(rng, y[train_idx])
    if config.max_epochs == 0:
        return params

    best = copy_params(params)
    best_loss = family.loss(params, x_val, y_val)
    if history is not None:
        history.append(best_loss)
    velocity = {k: np.zeros_like(params[k]) for k in family.trainable}
    lr, mom = config.learning_rate, config.momentum
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = family.loss_and_grad(params, x_all[batch], y[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch + 1}")
            if config.grad_clip is not None:
                norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in family.trainable))
                if norm > config.grad_clip:
                    for k in family.trainable:
                        grads[k] = grads[k] * (config.grad_clip / norm)
            for k in family.trainable:
                if mom:
                    velocity[k] *= mom
                    velocity[k] -= lr * grads[k]
                    params[k] += velocity[k]
                else:
                    params[k] -= lr * grads[k]
        if not _all_finite(params):
            raise TrainingDiverged(f"parameters became non-finite in epoch {epoch + 1}")
        val_loss = family.loss(params, x_val, y_val)
        if history is not None:
            history.append(val_loss)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss became non-finite in epoch {epoch + 1}")
        if val_loss < best_loss:
            best_loss = val_loss
            best = copy_params(params)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


def train_committee(
    family,
    x,
    y,
    config: TrainConfig,
    size: int,
    base_seed: int,
    init: list[Params] | None = None,
) -> list[Params]:
    """Fit ``size`` members with seeds ``base_seed .. base_seed + size - 1``.

    Under warm start each member resumes from its own entry in ``init``.
    """
    if size < 1:
        raise ConfigError("committee size must be >= 1")
    if config.retrain_mode == "warm_start" and init is not None and len(init) != size:
        raise ConfigError(f"warm start needs {size} initial parameter sets, got {len(init)}")
    members = []
    for c in range(size):
        start = init[c] if init is not None else None
        cfg = config
        if config.retrain_mode == "warm_start" and start is None:
            # first round of a warm-start run: nothing to resume from yet
            cfg = TrainConfig(**{**config.__dict__, "retrain_mode": "from_scratch"})
        try:
            members.append(fit(family, x, y, cfg, init=start, rng_seed=base_seed + c))
        except (TrainingDiverged, InsufficientData, ConfigError) as exc:
            raise type(exc)(f"committee member {c}: {exc}") from exc
    return members


def params_to_json(params: Params) -> str:
    """Lossless JSON encoding (floats are written with ``repr`` precision)."""
    payload = {
        k: {"shape": list(np.shape(v)), "data": [float(a) for a in np.ravel(v)]}
        for k, v in params.items()
    }
    return json.dumps(payload, sort_keys=True)


def params_from_json(text: str) -> Params:
    payload = json.loads(text)
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in payload.items()}
