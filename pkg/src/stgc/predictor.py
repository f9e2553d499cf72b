"""Minimal graph-gated recurrent forecaster with hand-written backprop.

One shared cell: gates are computed from the row-normalized propagation
of [input, hidden] per node, so spatial mixing happens inside the
recurrence. A joint linear readout maps the final hidden state to all
horizons at once. Weights are shared across nodes, which makes the
model permutation equivariant and keeps the parameter count independent
of the graph size. Reverse-mode gradients are accumulated explicitly
(numpy only) and are finite-difference checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import DatasetSplit, NormStats, TimeSeriesMatrix, inverse_zscore
from .errors import ComputationError, ValidationError
from .graphs import AdjacencyMatrix

PARAM_FIELDS = (
    "w_update", "w_reset", "w_cand",
    "b_update", "b_reset", "b_cand",
    "w_out", "b_out",
)


@dataclass(frozen=True)
class PropagationMatrix:
    """Row-normalized transition matrix (random-walk normalization)."""

    p: np.ndarray

    def __post_init__(self):
        self.p.setflags(write=False)

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass
class ModelParams:
    hidden_dim: int
    horizons: tuple[int, ...]
    w_update: np.ndarray
    w_reset: np.ndarray
    w_cand: np.ndarray
    b_update: np.ndarray
    b_reset: np.ndarray
    b_cand: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "ModelParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})


@dataclass(frozen=True)
class TrainConfig:
    input_window: int = 12
    horizons: tuple[int, ...] = (3, 6, 9, 12)
    hidden_dim: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 50
    batch_size: int = 32
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.input_window < 1:
            raise ValidationError("input window must be >= 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValidationError("horizons must be positive timestep counts")
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))


class TrainingDiverged(ComputationError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def normalize_propagation(adj: AdjacencyMatrix) -> PropagationMatrix:
    """Row-normalized aggregation matrix.

    Adjacency rows are indexed by cause and columns by effect, while a
    node aggregates from the nodes that feed it, so the adjacency is
    transposed before row normalization: row i of P spreads unit weight
    over i's in-neighbors (causes) and itself.
    """
    w = adj.weights.T
    row_sums = w.sum(axis=1)
    if np.any(row_sums <= 0):
        bad = int(np.argmin(row_sums))
        raise ValidationError(
            f"node {adj.node_ids[bad]} receives no edges; export the adjacency "
            "with self-loops before normalizing"
        )
    return PropagationMatrix(p=w / row_sums[:, None])


def init_params(hidden_dim: int, horizons, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    horizons = tuple(int(h) for h in horizons)
    k = len(horizons)
    width = 1 + hidden_dim
    scale = 1.0 / np.sqrt(width)

    def w(shape, s):
        return rng.uniform(-s, s, size=shape)

    return ModelParams(
        hidden_dim=hidden_dim,
        horizons=horizons,
        w_update=w((width, hidden_dim), scale),
        w_reset=w((width, hidden_dim), scale),
        w_cand=w((width, hidden_dim), scale),
        b_update=np.zeros(hidden_dim),
        b_reset=np.zeros(hidden_dim),
        b_cand=np.zeros(hidden_dim),
        w_out=w((k, hidden_dim), 1.0 / np.sqrt(hidden_dim)),
        b_out=np.zeros(k),
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_batch(params: ModelParams, p: np.ndarray, windows: np.ndarray,
                   keep_cache: bool):
    """windows [B x W x N] -> hidden [B x N x H], optional per-step cache."""
    batch, steps, n = windows.shape
    hidden_dim = params.hidden_dim
    # update and reset gates share their input; one fused matmul per step
    w_gates = np.concatenate([params.w_update, params.w_reset], axis=1)
    b_gates = np.concatenate([params.b_update, params.b_reset])
    h = np.zeros((batch, n, hidden_dim))
    cache = [] if keep_cache else None
    for t in range(steps):
        x_t = windows[:, t, :][:, :, None]  # [B, N, 1]
        concat = np.concatenate([x_t, h], axis=2)
        mixed = np.matmul(p, concat)
        gates = _sigmoid(mixed @ w_gates + b_gates)
        u = gates[..., :hidden_dim]
        r = gates[..., hidden_dim:]
        concat_r = np.concatenate([x_t, r * h], axis=2)
        mixed_r = np.matmul(p, concat_r)
        c = np.tanh(mixed_r @ params.w_cand + params.b_cand)
        h_prev = h
        h = u * h_prev + (1.0 - u) * c
        if keep_cache:
            cache.append((mixed, mixed_r, u, r, c, h_prev))
    return h, cache


def _readout(params: ModelParams, h: np.ndarray) -> np.ndarray:
    """hidden [B x N x H] -> predictions [B x N x K]."""
    return h @ params.w_out.T + params.b_out


def forward(params: ModelParams, prop: PropagationMatrix, window: np.ndarray) -> np.ndarray:
    """Predict all horizons from one input window [W x N]; returns [K x N]."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != prop.n:
        raise ValidationError(
            f"window must be [steps x {prop.n}], got {window.shape}"
        )
    h, _ = _forward_batch(params, prop.p, window[None], keep_cache=False)
    return _readout(params, h)[0].T


def loss_and_gradients(params: ModelParams, prop: PropagationMatrix,
                       windows: np.ndarray, targets: np.ndarray,
                       mask: np.ndarray):
    """Masked MSE and its gradient in every parameter.

    ``windows`` [B x W x N], ``targets`` and ``mask`` [B x N x K]. The
    mean runs over valid target entries only.
    """
    if windows.shape[0] == 0:
        raise ValidationError("empty batch")
    mask = mask.astype(bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ComputationError("batch has no valid targets")
    p = prop.p
    h_final, cache = _forward_batch(params, p, windows, keep_cache=True)
    preds = _readout(params, h_final)

    diff = np.where(mask, preds - targets, 0.0)
    loss = float(np.square(diff).sum() / n_valid)

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    d_preds = 2.0 * diff / n_valid
    grads["w_out"] = np.einsum("bnk,bnh->kh", d_preds, h_final)
    grads["b_out"] = d_preds.sum(axis=(0, 1))
    d_h = d_preds @ params.w_out

    p_t = p.T
    w_gates = np.concatenate([params.w_update, params.w_reset], axis=1)
    for t in range(windows.shape[1] - 1, -1, -1):
        mixed, mixed_r, u, r, c, h_prev = cache[t]
        d_u = d_h * (h_prev - c)
        d_c = d_h * (1.0 - u)
        d_h_prev = d_h * u

        d_ac = d_c * (1.0 - c * c)
        grads["w_cand"] += np.einsum("bnp,bnh->ph", mixed_r, d_ac)
        grads["b_cand"] += d_ac.sum(axis=(0, 1))
        d_mixed_r = d_ac @ params.w_cand.T
        d_concat_r = np.matmul(p_t, d_mixed_r)
        d_rh = d_concat_r[:, :, 1:]
        d_r = d_rh * h_prev
        d_h_prev += d_rh * r

        d_gates = np.concatenate([d_u * u * (1.0 - u), d_r * r * (1.0 - r)], axis=2)
        d_w_gates = np.einsum("bnp,bnh->ph", mixed, d_gates)
        hidden_dim = params.hidden_dim
        grads["w_update"] += d_w_gates[:, :hidden_dim]
        grads["w_reset"] += d_w_gates[:, hidden_dim:]
        d_b_gates = d_gates.sum(axis=(0, 1))
        grads["b_update"] += d_b_gates[:hidden_dim]
        grads["b_reset"] += d_b_gates[hidden_dim:]
        d_mixed = d_gates @ w_gates.T
        d_concat = np.matmul(p_t, d_mixed)
        d_h = d_h_prev + d_concat[:, :, 1:]
    return loss, grads


def make_samples(matrix: TimeSeriesMatrix, window: int, horizons, stride: int = 1):
    """Slice a (normalized) matrix into supervised samples.

    Returns (windows [S x W x N], targets [S x N x K], mask [S x N x K]).
    Origins step by ``stride``; targets for horizon h sit h-1 steps past
    the window's end.
    """
    horizons = tuple(int(h) for h in horizons)
    max_h = max(horizons)
    t_total = matrix.n_timesteps
    last_origin = t_total - window - max_h
    if last_origin < 0:
        raise ValidationError(
            f"split of length {t_total} is shorter than window {window} "
            f"+ max horizon {max_h}"
        )
    origins = range(0, last_origin + 1, stride)
    values = matrix.values
    vmask = matrix.mask
    xs = np.stack([values[:, a : a + window].T for a in origins])
    ys = np.stack(
        [
            np.stack([values[:, a + window - 1 + h] for h in horizons], axis=1)
            for a in origins
        ]
    )
    ms = np.stack(
        [
            np.stack([vmask[:, a + window - 1 + h] for h in horizons], axis=1)
            for a in origins
        ]
    )
    return xs, ys, ms


def evaluate_mse(params: ModelParams, prop: PropagationMatrix, windows, targets, mask,
                 batch_size: int = 256) -> float:
    total, count = 0.0, 0
    for lo in range(0, windows.shape[0], batch_size):
        hi = min(lo + batch_size, windows.shape[0])
        h, _ = _forward_batch(params, prop.p, windows[lo:hi], keep_cache=False)
        preds = _readout(params, h)
        m = mask[lo:hi]
        diff = np.where(m, preds - targets[lo:hi], 0.0)
        total += float(np.square(diff).sum())
        count += int(m.sum())
    if count == 0:
        raise ComputationError("no valid targets to evaluate")
    return total / count


def train(prop: PropagationMatrix, splits: DatasetSplit, config: TrainConfig):
    """Adam with early stopping on validation MSE.

    ``splits`` must hold normalized matrices. Returns the best-validation
    parameters and the per-epoch log [(epoch, train_mse, val_mse), ...].
    """
    train_x, train_y, train_m = make_samples(
        splits.train, config.input_window, config.horizons
    )
    val_x, val_y, val_m = make_samples(
        splits.val, config.input_window, config.horizons
    )
    params = init_params(config.hidden_dim, config.horizons, config.seed)
    rng = np.random.default_rng(config.seed)
    moment1 = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    log: list[tuple[int, float, float]] = []
    best_val = np.inf
    best_params = params.copy()
    bad_epochs = 0
    n_samples = train_x.shape[0]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_samples)
        epoch_losses = []
        for lo in range(0, n_samples, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = loss_and_gradients(
                params, prop, train_x[idx], train_y[idx], train_m[idx]
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", log)
            epoch_losses.append(loss)
            step += 1
            for name in PARAM_FIELDS:
                g = grads[name]
                moment1[name] = beta1 * moment1[name] + (1 - beta1) * g
                moment2[name] = beta2 * moment2[name] + (1 - beta2) * g * g
                m_hat = moment1[name] / (1 - beta1**step)
                v_hat = moment2[name] / (1 - beta2**step)
                getattr(params, name)[...] -= (
                    config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
                )
        val_mse = evaluate_mse(params, prop, val_x, val_y, val_m)
        if not np.isfinite(val_mse):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", log)
        log.append((epoch, float(np.mean(epoch_losses)), float(val_mse)))
        if val_mse < best_val:
            best_val = val_mse
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    return best_params, log


@dataclass(frozen=True)
class PredictionBatch:
    """Per-horizon (predicted, true, mask) matrices in original units."""

    horizons: tuple[int, ...]
    predicted: dict
    true: dict
    mask: dict
    sampling_interval: float


def predict_test(params: ModelParams, prop: PropagationMatrix,
                 test_matrix: TimeSeriesMatrix, stats: NormStats,
                 window: int, horizons) -> PredictionBatch:
    """Non-overlapping-target evaluation over a normalized test split.

    Prediction origins step by the maximum horizon so each truth column
    is consumed at most once per horizon; outputs are inverse-normalized
    back to original speed units.
    """
    horizons = tuple(int(h) for h in horizons)
    max_h = max(horizons)
    xs, ys, ms = make_samples(test_matrix, window, horizons, stride=max_h)
    preds = []
    for lo in range(0, xs.shape[0], 256):
        h, _ = _forward_batch(params, prop.p, xs[lo : lo + 256], keep_cache=False)
        preds.append(_readout(params, h))
    pred = np.concatenate(preds, axis=0)  # [S x N x K]

    truth_orig = inverse_zscore(test_matrix, stats)
    mean, std = stats.mean, stats.std
    predicted, true, mask = {}, {}, {}
    for k, h in enumerate(horizons):
        p_norm = pred[:, :, k]  # [S x N]
        if stats.per_sensor:
            p_orig = p_norm * std[None, :] + mean[None, :]
        else:
            p_orig = p_norm * std[0] + mean[0]
        predicted[h] = p_orig
        origins = np.arange(ys.shape[0]) * max_h
        cols = origins + window - 1 + h
        true[h] = truth_orig.values[:, cols].T
        mask[h] = test_matrix.mask[:, cols].T
    return PredictionBatch(
        horizons=horizons,
        predicted=predicted,
        true=true,
        mask=mask,
        sampling_interval=test_matrix.sampling_interval,
    )


# ---------------------------------------------------------------------------
# Checkpoint and log serialization.
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def params_to_dict(params: ModelParams) -> dict:
    payload = {
        "version": CHECKPOINT_VERSION,
        "hidden_dim": params.hidden_dim,
        "horizons": list(params.horizons),
        "tensors": {},
    }
    for name, arr in params.arrays().items():
        payload["tensors"][name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    return payload


def params_from_dict(payload: dict) -> ModelParams:
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {payload.get('version')}")
    tensors = {}
    for name in PARAM_FIELDS:
        entry = payload["tensors"][name]
        tensors[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return ModelParams(
        hidden_dim=int(payload["hidden_dim"]),
        horizons=tuple(int(h) for h in payload["horizons"]),
        **tensors,
    )


def log_to_csv(log) -> str:
    rows = ["epoch,train_mse,val_mse"]
    rows += [f"{e},{tr!r},{va!r}" for e, tr, va in log]
    return "\n".join(rows) + "\n"
