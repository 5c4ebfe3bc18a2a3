"""Gated residual network regressor with hand-written reverse-mode gradients.

Architecture: input projection (linear, batch norm, ReLU), a stack of gated
residual blocks (gated linear unit on the branch, dropout, residual add,
batch norm), and a scalar regression head. Everything runs in float64 numpy;
training is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BatchTooSmallError,
    DivergedTrainingError,
    EmptyDatasetError,
    InvalidHyperparamsError,
    NotFittedError,
    ShapeMismatchError,
    StaleCacheError,
)
from .features import CATEGORY_ORDER, Scaler, canonical_one_hot

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

HIDDEN_DIM_CHOICES = tuple(range(64, 1025, 64))

# Tuned operating point used as the package default.
DEFAULT_HIDDEN_DIM = 192
DEFAULT_NUM_BLOCKS = 2
DEFAULT_DROPOUT = 0.1298
DEFAULT_LR = 0.00828


@dataclass(frozen=True)
class GrnHyperparams:
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    num_blocks: int = DEFAULT_NUM_BLOCKS
    dropout: float = DEFAULT_DROPOUT
    lr: float = DEFAULT_LR

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise InvalidHyperparamsError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.num_blocks < 1:
            raise InvalidHyperparamsError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidHyperparamsError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise InvalidHyperparamsError(f"lr must be positive, got {self.lr}")


def validate_search_range(hp: GrnHyperparams) -> GrnHyperparams:
    """Enforce the tuning search-space ranges (used at the tuning/CLI boundary;
    arbitrarily small nets remain constructible for diagnostics)."""
    if hp.hidden_dim not in HIDDEN_DIM_CHOICES:
        raise InvalidHyperparamsError(
            f"hidden_dim must be a multiple of 64 in [64, 1024], got {hp.hidden_dim}")
    if not 2 <= hp.num_blocks <= 10:
        raise InvalidHyperparamsError(f"num_blocks must lie in [2, 10], got {hp.num_blocks}")
    if not 0.1 <= hp.dropout <= 0.6:
        raise InvalidHyperparamsError(f"dropout must lie in [0.1, 0.6], got {hp.dropout}")
    if not 1e-4 <= hp.lr <= 1e-2:
        raise InvalidHyperparamsError(f"lr must lie in [1e-4, 1e-2], got {hp.lr}")
    return hp


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 64
    patience: int = 25
    seed: int = 0
    val_fraction: float = 0.2
    weight_decay: float = 1e-4
    adam_eps: float = 1e-8
    # halve the step size after this many epochs without validation
    # improvement (0 disables the schedule); floor at lr_floor
    lr_halve_patience: int = 8
    lr_floor: float = 1e-5

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise InvalidHyperparamsError("batch_size must be >= 2 (batch statistics)")
        if not 0 <= self.patience < self.max_epochs:
            raise InvalidHyperparamsError("need 0 <= patience < max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidHyperparamsError("val_fraction must lie in (0, 1)")


@dataclass
class GrnParams:
    """All tensors of the network, keyed by name.

    Learnable tensors plus batch-norm running statistics (``*_run_mean``,
    ``*_run_var``), which are updated during training but carry no gradient.
    """

    hyperparams: GrnHyperparams
    input_dim: int
    tensors: dict[str, np.ndarray]

    def copy(self) -> "GrnParams":
        return GrnParams(self.hyperparams, self.input_dim,
                         {k: v.copy() for k, v in self.tensors.items()})


LEARNABLE_SUFFIXES = ("_w", "_b", "_gamma", "_beta")
DECAYED_SUFFIX = "_w"


def learnable_names(params: GrnParams) -> list[str]:
    return [k for k in params.tensors if k.endswith(LEARNABLE_SUFFIXES)]


def parameter_count(params: GrnParams) -> int:
    return sum(params.tensors[k].size for k in learnable_names(params))


def init_model(hp: GrnHyperparams, input_dim: int, seed: int) -> GrnParams:
    """Fan-in-scaled uniform initialization; bit-identical for a fixed seed."""
    if input_dim < 1:
        raise InvalidHyperparamsError("input_dim must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    h = hp.hidden_dim

    def linear(fan_in: int, shape: tuple) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t: dict[str, np.ndarray] = {}
    t["in_w"] = linear(input_dim, (input_dim, h))
    t["in_b"] = linear(input_dim, (h,))
    t["in_bn_gamma"] = np.ones(h)
    t["in_bn_beta"] = np.zeros(h)
    t["in_bn_run_mean"] = np.zeros(h)
    t["in_bn_run_var"] = np.ones(h)
    for blk in range(hp.num_blocks):
        t[f"blk{blk}_value_w"] = linear(h, (h, h))
        t[f"blk{blk}_value_b"] = linear(h, (h,))
        t[f"blk{blk}_gate_w"] = linear(h, (h, h))
        t[f"blk{blk}_gate_b"] = linear(h, (h,))
        t[f"blk{blk}_bn_gamma"] = np.ones(h)
        t[f"blk{blk}_bn_beta"] = np.zeros(h)
        t[f"blk{blk}_bn_run_mean"] = np.zeros(h)
        t[f"blk{blk}_bn_run_var"] = np.ones(h)
    t["head_w"] = linear(h, (h, 1))
    t["head_b"] = linear(h, (1,))
    return GrnParams(hp, input_dim, t)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(
    params: GrnParams,
    batch: np.ndarray,
    mode: str = "infer",
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Predictions for a batch plus the cache needed by :func:`backward`.

    Train mode normalizes with batch statistics and applies inverted dropout
    seeded by ``seed``; infer mode uses running statistics and no dropout and
    mutates nothing.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeMismatchError(f"batch shape {x.shape} does not match input_dim {params.input_dim}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise BatchTooSmallError("train-mode forward needs n >= 2")
    t = params.tensors
    hp = params.hyperparams
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed))) if train else None

    cache: dict = {"mode": mode, "x": x, "n": x.shape[0], "blocks": [],
                   "model_id": id(params)}

    def batchnorm(z: np.ndarray, prefix: str) -> tuple[np.ndarray, dict]:
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
        else:
            mu = t[f"{prefix}_run_mean"]
            var = t[f"{prefix}_run_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        z_hat = (z - mu) * inv_std
        out = t[f"{prefix}_gamma"] * z_hat + t[f"{prefix}_beta"]
        return out, {"z_hat": z_hat, "inv_std": inv_std, "mu": mu, "var": var,
                     "prefix": prefix}

    z_in = x @ t["in_w"] + t["in_b"]
    bn_out, bn_cache = batchnorm(z_in, "in_bn")
    h = np.maximum(bn_out, 0.0)
    cache["in_bn"] = bn_cache
    cache["relu_mask"] = bn_out > 0.0

    for blk in range(hp.num_blocks):
        h_in = h
        value = h_in @ t[f"blk{blk}_value_w"] + t[f"blk{blk}_value_b"]
        gate_pre = h_in @ t[f"blk{blk}_gate_w"] + t[f"blk{blk}_gate_b"]
        gate = _sigmoid(gate_pre)
        glu = value * gate
        if train and hp.dropout > 0:
            mask = (rng.random(glu.shape) >= hp.dropout) / (1.0 - hp.dropout)
        else:
            mask = None
        dropped = glu * mask if mask is not None else glu
        z = h_in + dropped
        h, bn_cache = batchnorm(z, f"blk{blk}_bn")
        cache["blocks"].append({
            "h_in": h_in, "value": value, "gate": gate, "glu": glu,
            "mask": mask, "bn": bn_cache,
        })

    pred = (h @ t["head_w"] + t["head_b"]).ravel()
    cache["h_last"] = h
    return pred, cache


def running_stat_updates(params: GrnParams, cache: dict) -> dict[str, np.ndarray]:
    """New running-statistic tensors implied by a train-mode cache."""
    if cache["mode"] != "train":
        return {}
    t = params.tensors
    updates = {}
    for bn_cache in [cache["in_bn"]] + [b["bn"] for b in cache["blocks"]]:
        prefix = bn_cache["prefix"]
        updates[f"{prefix}_run_mean"] = (
            (1 - BN_MOMENTUM) * t[f"{prefix}_run_mean"] + BN_MOMENTUM * bn_cache["mu"])
        updates[f"{prefix}_run_var"] = (
            (1 - BN_MOMENTUM) * t[f"{prefix}_run_var"] + BN_MOMENTUM * bn_cache["var"])
    return updates


def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its gradient w.r.t. the predictions."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatchError("pred/target shape mismatch")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / len(pred)
    return loss, grad


def _bn_backward(dy: np.ndarray, bn_cache: dict, gamma: np.ndarray):
    z_hat, inv_std = bn_cache["z_hat"], bn_cache["inv_std"]
    n = dy.shape[0]
    d_gamma = (dy * z_hat).sum(axis=0)
    d_beta = dy.sum(axis=0)
    d_zhat = dy * gamma
    dz = (inv_std / n) * (
        n * d_zhat - d_zhat.sum(axis=0) - z_hat * (d_zhat * z_hat).sum(axis=0))
    return dz, d_gamma, d_beta


def backward(params: GrnParams, cache: dict, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss for every learnable tensor."""
    if cache.get("mode") != "train":
        raise StaleCacheError("backward needs a train-mode cache")
    if cache.get("model_id") != id(params):
        raise StaleCacheError("cache was produced by a different model instance")
    t = params.tensors
    hp = params.hyperparams
    grads: dict[str, np.ndarray] = {}

    dpred = np.asarray(loss_grad, dtype=float).reshape(-1, 1)
    if dpred.shape[0] != cache["n"]:
        raise StaleCacheError("loss gradient length does not match cached batch")
    grads["head_w"] = cache["h_last"].T @ dpred
    grads["head_b"] = dpred.sum(axis=0)
    dh = dpred @ t["head_w"].T

    for blk in reversed(range(hp.num_blocks)):
        bc = cache["blocks"][blk]
        dz, d_gamma, d_beta = _bn_backward(dh, bc["bn"], t[f"blk{blk}_bn_gamma"])
        grads[f"blk{blk}_bn_gamma"] = d_gamma
        grads[f"blk{blk}_bn_beta"] = d_beta
        d_glu = dz * bc["mask"] if bc["mask"] is not None else dz
        d_value = d_glu * bc["gate"]
        d_gate_pre = d_glu * bc["value"] * bc["gate"] * (1.0 - bc["gate"])
        grads[f"blk{blk}_value_w"] = bc["h_in"].T @ d_value
        grads[f"blk{blk}_value_b"] = d_value.sum(axis=0)
        grads[f"blk{blk}_gate_w"] = bc["h_in"].T @ d_gate_pre
        grads[f"blk{blk}_gate_b"] = d_gate_pre.sum(axis=0)
        dh = dz + d_value @ t[f"blk{blk}_value_w"].T + d_gate_pre @ t[f"blk{blk}_gate_w"].T

    dy = dh * cache["relu_mask"]
    dz_in, d_gamma, d_beta = _bn_backward(dy, cache["in_bn"], t["in_bn_gamma"])
    grads["in_bn_gamma"] = d_gamma
    grads["in_bn_beta"] = d_beta
    grads["in_w"] = cache["x"].T @ dz_in
    grads["in_b"] = dz_in.sum(axis=0)
    return grads


@dataclass
class OptState:
    """Per-tensor first/second moment estimates and shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    weight_decay: float = 1e-4
    eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999


def adamw_step(
    params: GrnParams,
    grads: dict[str, np.ndarray],
    state: OptState,
    lr: float,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay applies to weight matrices only; biases and batch-norm scale/shift
    stay undecayed.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name in sorted(grads):
        g = grads[name]
        theta = params.tensors[name]
        if g.shape != theta.shape:
            raise ShapeMismatchError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        if name.endswith(DECAYED_SUFFIX):
            update = update + state.weight_decay * theta
        theta -= lr * update


@dataclass
class TrainResult:
    params: GrnParams
    history: list[dict]
    best_epoch: int
    best_val_mae: float


def train(
    hp: GrnHyperparams,
    features: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch AdamW on MAE with early stopping on a held-out split.

    Fully deterministic given (features, targets, hp, cfg). Returns the
    best-validation snapshot and the per-epoch loss history.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyDatasetError("empty training matrix")
    if len(x) != len(y):
        raise ShapeMismatchError("features/targets length mismatch")

    split_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xD5))))
    perm = split_rng.permutation(len(x))
    n_val = max(1, int(round(cfg.val_fraction * len(x))))
    if n_val >= len(x):
        raise EmptyDatasetError("validation split leaves no training rows")
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    params = init_model(hp, x.shape[1], cfg.seed)
    state = OptState(weight_decay=cfg.weight_decay, eps=cfg.adam_eps)

    best = params.copy()
    best_val = math.inf
    best_epoch = -1
    stall = 0
    lr_stall = 0
    lr = hp.lr
    history: list[dict] = []

    for epoch in range(cfg.max_epochs):
        epoch_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.seed, 1, epoch))))
        order = epoch_rng.permutation(len(x_tr))
        batch_losses = []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            drop_seed = int(np.random.SeedSequence((cfg.seed, 2, epoch, step)).generate_state(1)[0])
            pred, cache = forward(params, x_tr[idx], mode="train", seed=drop_seed)
            loss, lgrad = mae_loss(pred, y_tr[idx])
            if not math.isfinite(loss):
                raise DivergedTrainingError(f"loss became {loss} at epoch {epoch}")
            grads = backward(params, cache, lgrad)
            adamw_step(params, grads, state, lr)
            for name, tensor in running_stat_updates(params, cache).items():
                params.tensors[name] = tensor
            batch_losses.append(loss)

        val_pred, _ = forward(params, x_val, mode="infer")
        val_mae, _ = mae_loss(val_pred, y_val)
        if not math.isfinite(val_mae):
            raise DivergedTrainingError(f"validation loss became {val_mae} at epoch {epoch}")
        history.append({
            "epoch": epoch,
            "train_mae": float(np.mean(batch_losses)) if batch_losses else math.nan,
            "val_mae": val_mae,
            "lr": lr,
        })
        if val_mae < best_val:
            best_val = val_mae
            best = params.copy()
            best_epoch = epoch
            stall = 0
            lr_stall = 0
        else:
            stall += 1
            lr_stall += 1
            if stall > cfg.patience:
                break
            if cfg.lr_halve_patience and lr_stall >= cfg.lr_halve_patience and lr > cfg.lr_floor:
                lr = max(lr / 2.0, cfg.lr_floor)
                lr_stall = 0

    return TrainResult(params=best, history=history, best_epoch=best_epoch,
                       best_val_mae=best_val)


# ---------------------------------------------------------------------------
# checkpoint bundle: model + scaler + feature bookkeeping
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class CorrectionModel:
    """Everything needed to turn a feature vector into a corrected distance."""

    params: GrnParams
    scaler: Scaler
    retained_features: list[str]
    locator: str
    train_config: TrainConfig
    category_order: tuple[str, ...] = CATEGORY_ORDER

    def model_input(self, feature_values: dict[str, float], fault_type: str) -> np.ndarray:
        feats = np.array([[feature_values[n] for n in self.retained_features]])
        std = self.scaler.transform(feats)
        hot = np.array([canonical_one_hot(fault_type)], dtype=float)
        return np.hstack([std, hot])

    def predict_correction_km(self, inputs: np.ndarray) -> np.ndarray:
        pred, _ = forward(self.params, inputs, mode="infer")
        return np.asarray(self.scaler.inverse_target(pred), dtype=float)

    def predict_corrected(
        self,
        feature_values: dict[str, float],
        fault_type: str,
        d_est_km: float,
        d_max_km: float,
    ) -> float:
        """Estimate plus predicted correction, clamped into [0, line length]."""
        if not self.scaler.fitted:
            raise NotFittedError("scaler not fitted")
        corr = float(self.predict_correction_km(self.model_input(feature_values, fault_type))[0])
        return min(max(d_est_km + corr, 0.0), d_max_km)

    def save(self, path: str) -> None:
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "kind": "grn-correction",
            "locator": self.locator,
            "hyperparams": {
                "hidden_dim": self.params.hyperparams.hidden_dim,
                "num_blocks": self.params.hyperparams.num_blocks,
                "dropout": self.params.hyperparams.dropout,
                "lr": self.params.hyperparams.lr,
            },
            "input_dim": self.params.input_dim,
            "retained_features": self.retained_features,
            "category_order": list(self.category_order),
            "scaler": self.scaler.to_dict(),
            "train_config": {
                "max_epochs": self.train_config.max_epochs,
                "batch_size": self.train_config.batch_size,
                "patience": self.train_config.patience,
                "seed": self.train_config.seed,
                "val_fraction": self.train_config.val_fraction,
                "weight_decay": self.train_config.weight_decay,
                "adam_eps": self.train_config.adam_eps,
            },
            "tensors": {k: v.tolist() for k, v in sorted(self.params.tensors.items())},
        }
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "CorrectionModel":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise NotFittedError(f"unsupported checkpoint version in {path}")
        hp = GrnHyperparams(**doc["hyperparams"])
        tensors = {k: np.asarray(v, dtype=float) for k, v in doc["tensors"].items()}
        params = GrnParams(hp, int(doc["input_dim"]), tensors)
        return cls(
            params=params,
            scaler=Scaler.from_dict(doc["scaler"]),
            retained_features=list(doc["retained_features"]),
            locator=doc["locator"],
            train_config=TrainConfig(**doc["train_config"]),
            category_order=tuple(doc["category_order"]),
        )
