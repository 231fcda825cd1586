"""Linear-time sequence classifier over per-clip feature vectors.

Architecture: an input projection embeds each clip's pooled feature vector
into hidden_dim, then n_blocks residual blocks of

    layer norm (scale only) -> diagonal SSM scan -> GELU
    -> channel-mixing affine -> dropout (train mode) -> residual add

followed by mean-pooling over the clip axis and an affine decoder to class
logits.  Each SSM channel h is an independent scalar state-space system

    x_k = Abar_h x_{k-1} + Bbar_h u_k,    y_k = c_h x_k + d_h u_k

with zero-order-hold discretization Abar = exp(dt*A), Bbar = (Abar-1)/A * b,
A = -exp(a_raw) < 0 and dt = exp(log_dt) > 0, so |Abar| < 1 unconditionally
and the scan runs in O(L*H) time.

Training uses focal loss, Adam with decoupled weight decay, and a
reduce-on-plateau learning-rate schedule.  All gradients are hand-written
and checked against central finite differences in the test suite.

Checkpoint format MPCK (little-endian): magic "MPCK", version u16 = 1,
u32 length-prefixed JSON metadata (config, epoch, best_val_loss, seed,
pipeline tags), then all parameter arrays as f64 in the order given by
param_items(): w_in, b_in, per block (gain, a_raw, log_dt, b, c, skip_d,
w_mix, b_mix), w_dec, b_dec.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import erf

from .features import FeatureGrid
from .mask import WINDOW, MaskWindow

MPCK_MAGIC = b"MPCK"
MPCK_VERSION = 1

_NORM_EPS = 1e-6
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# parameter leaves exempt from weight decay
_NO_DECAY = ("gain", "b_in", "b_mix", "b_dec")


class DivergenceError(RuntimeError):
    """Raised when training or inference produces non-finite values."""


@dataclass
class ModelConfig:
    input_dim: int = 4
    hidden_dim: int = 64
    n_blocks: int = 2
    n_classes: int = 15
    dropout_rate: float = 0.2
    focal_gamma: float = 2.0

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "n_blocks", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16
    max_epochs: int = 200
    plateau_patience: int = 10
    lr_factor: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class SsmLayerParams:
    a_raw: np.ndarray   # (H,) state log-rates, A = -exp(a_raw)
    log_dt: np.ndarray  # (H,) log step sizes
    b: np.ndarray       # (H,) input weights
    c: np.ndarray       # (H,) output weights
    skip_d: np.ndarray  # (H,) skip-through weights


@dataclass
class BlockParams:
    gain: np.ndarray    # (H,) norm scales
    ssm: SsmLayerParams
    w_mix: np.ndarray   # (H, H)
    b_mix: np.ndarray   # (H,)


@dataclass
class SsmParams:
    w_in: np.ndarray    # (H, Din)
    b_in: np.ndarray    # (H,)
    blocks: list[BlockParams]
    w_dec: np.ndarray   # (K, H)
    b_dec: np.ndarray   # (K,)


@dataclass
class SsmCheckpoint:
    config: ModelConfig
    params: SsmParams
    epoch: int = 0
    best_val_loss: float = float("inf")
    seed: int = 0
    pipeline: dict = field(default_factory=dict)


def param_items(params: SsmParams) -> list[tuple[str, np.ndarray]]:
    """All parameter arrays in the fixed serialization/update order."""
    items = [("w_in", params.w_in), ("b_in", params.b_in)]
    for i, blk in enumerate(params.blocks):
        items += [
            (f"block{i}.gain", blk.gain),
            (f"block{i}.a_raw", blk.ssm.a_raw),
            (f"block{i}.log_dt", blk.ssm.log_dt),
            (f"block{i}.b", blk.ssm.b),
            (f"block{i}.c", blk.ssm.c),
            (f"block{i}.skip_d", blk.ssm.skip_d),
            (f"block{i}.w_mix", blk.w_mix),
            (f"block{i}.b_mix", blk.b_mix),
        ]
    items += [("w_dec", params.w_dec), ("b_dec", params.b_dec)]
    return items


def init_params(config: ModelConfig, seed: int) -> SsmParams:
    """Seeded initialization: stable SSM rates, fan-in-scaled projections."""
    rng = np.random.default_rng(seed)
    h, din, k = config.hidden_dim, config.input_dim, config.n_classes

    def fan_in_uniform(shape, fan_in):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, shape)

    w_in = fan_in_uniform((h, din), din)
    blocks = []
    for _ in range(config.n_blocks):
        a_raw = np.log(rng.uniform(0.5, 1.0, h))  # A in [-1, -0.5]
        log_dt = rng.uniform(np.log(0.001), np.log(0.1), h)
        c = rng.uniform(-1.0, 1.0, h)
        w_mix = fan_in_uniform((h, h), h)
        blocks.append(
            BlockParams(
                gain=np.ones(h),
                ssm=SsmLayerParams(
                    a_raw=a_raw,
                    log_dt=log_dt,
                    b=np.ones(h),
                    c=c,
                    skip_d=np.ones(h),
                ),
                w_mix=w_mix,
                b_mix=np.zeros(h),
            )
        )
    w_dec = fan_in_uniform((k, h), h)
    return SsmParams(
        w_in=w_in,
        b_in=np.zeros(h),
        blocks=blocks,
        w_dec=w_dec,
        b_dec=np.zeros(k),
    )


# --------------------------------------------------------------------------
# clip pooling / embedding
# --------------------------------------------------------------------------

def pool_feature_grid(
    features: FeatureGrid, window: MaskWindow | None = None
) -> np.ndarray:
    """Per-channel mean over temporal bins and cells (window cells if given)."""
    data = features.data
    if window is not None:
        data = data[
            :,
            window.row : window.row + WINDOW,
            window.col : window.col + WINDOW,
            :,
        ]
    return data.mean(axis=(0, 1, 2))


def embed_clip(
    params: SsmParams, features: FeatureGrid, window: MaskWindow | None = None
) -> np.ndarray:
    """Pooled clip vector projected to hidden_dim."""
    return params.w_in @ pool_feature_grid(features, window) + params.b_in


# --------------------------------------------------------------------------
# forward pieces
# --------------------------------------------------------------------------

def discretize(layer: SsmLayerParams) -> tuple[np.ndarray, ...]:
    """Zero-order-hold discretization; returns (A, dt, abar, bbar)."""
    a = -np.exp(layer.a_raw)
    dt = np.exp(layer.log_dt)
    abar = np.exp(dt * a)
    bbar = (abar - 1.0) / a * layer.b
    return a, dt, abar, bbar


def ssm_scan(layer: SsmLayerParams, u: np.ndarray) -> np.ndarray:
    """Run the discretized recurrence over a (L, H) input sequence."""
    y, _ = _scan_with_states(layer, np.asarray(u, dtype=np.float64))
    if not np.isfinite(y).all():
        raise DivergenceError("non-finite value in state-space scan")
    return y


def _scan_with_states(
    layer: SsmLayerParams, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    _, _, abar, bbar = discretize(layer)
    length, h = u.shape
    xs = np.empty((length, h))
    x = np.zeros(h)
    for k in range(length):
        x = abar * x + bbar * u[k]
        xs[k] = x
    y = layer.c * xs + layer.skip_d * u
    return y, xs


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def _dropout_mask(rng, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward_cached(
    params: SsmParams,
    x: np.ndarray,
    dropout_rate: float,
    train_mode: bool,
    rng,
) -> tuple[np.ndarray, dict]:
    """Full forward pass keeping every intermediate needed by backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("expected a nonempty (L, input_dim) sequence")
    u = x @ params.w_in.T + params.b_in
    cache: dict = {"x": x, "u0": u, "blocks": []}
    for blk in params.blocks:
        mu = u.mean(axis=1, keepdims=True)
        var = u.var(axis=1, keepdims=True)
        sigma = np.sqrt(var + _NORM_EPS)
        zhat = (u - mu) / sigma
        z = blk.gain * zhat
        s, xs = _scan_with_states(blk.ssm, z)
        g = _gelu(s)
        m = g @ blk.w_mix.T + blk.b_mix
        if train_mode and dropout_rate > 0.0:
            dmask = _dropout_mask(rng, m.shape, dropout_rate)
        else:
            dmask = None
        branch = m * dmask if dmask is not None else m
        cache["blocks"].append(
            {"u_in": u, "sigma": sigma, "zhat": zhat, "z": z, "xs": xs,
             "s": s, "g": g, "dmask": dmask}
        )
        u = u + branch
    pooled = u.mean(axis=0)
    logits = params.w_dec @ pooled + params.b_dec
    cache["u_out"] = u
    cache["pooled"] = pooled
    if not np.isfinite(logits).all():
        raise DivergenceError("non-finite logits")
    return logits, cache


def forward(
    checkpoint: SsmCheckpoint,
    x: np.ndarray,
    train_mode: bool = False,
    rng_seed: int = 0,
) -> np.ndarray:
    """Logits for one (L, input_dim) sequence of pooled clip features."""
    rng = np.random.default_rng(rng_seed) if train_mode else None
    logits, _ = _forward_cached(
        checkpoint.params, x, checkpoint.config.dropout_rate, train_mode, rng
    )
    return logits


# --------------------------------------------------------------------------
# focal loss
# --------------------------------------------------------------------------

def focal_loss(
    logits: np.ndarray, target: int, gamma: float
) -> tuple[float, np.ndarray]:
    """Loss -(1-p_t)^gamma * log p_t and its analytic logit gradient."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("non-finite logits")
    if not 0 <= target < z.shape[0]:
        raise ValueError(f"target {target} outside [0, {z.shape[0]})")
    shifted = z - z.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    p = np.exp(logp)
    pt = p[target]
    logpt = logp[target]
    one_minus = 1.0 - pt
    loss = -(one_minus**gamma) * logpt

    delta = np.zeros_like(p)
    delta[target] = 1.0
    if gamma == 0.0:
        bracket = -1.0
    elif one_minus <= 0.0:
        bracket = 0.0  # p_t saturated; the exact limit of both terms is 0
    else:
        bracket = gamma * pt * one_minus ** (gamma - 1.0) * logpt - one_minus**gamma
    grad = bracket * (delta - p)
    return float(loss), grad


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def _zero_grads(params: SsmParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in param_items(params)}


def _backward_sample(
    params: SsmParams,
    cache: dict,
    dlogits: np.ndarray,
    dropout_rate: float,
    grads: dict[str, np.ndarray],
    scale: float,
) -> None:
    """Accumulate scale * dLoss/dparam for one cached forward pass."""
    pooled = cache["pooled"]
    grads["w_dec"] += scale * np.outer(dlogits, pooled)
    grads["b_dec"] += scale * dlogits
    dpooled = params.w_dec.T @ dlogits
    length = cache["u_out"].shape[0]
    du = np.tile(dpooled / length, (length, 1))

    for i in reversed(range(len(params.blocks))):
        blk = params.blocks[i]
        cb = cache["blocks"][i]
        dbranch = du
        dm = dbranch * cb["dmask"] if cb["dmask"] is not None else dbranch
        grads[f"block{i}.w_mix"] += scale * dm.T @ cb["g"]
        grads[f"block{i}.b_mix"] += scale * dm.sum(axis=0)
        dg = dm @ blk.w_mix
        ds = dg * _gelu_grad(cb["s"])

        # scan backward
        a, dt, abar, bbar = discretize(blk.ssm)
        xs, z = cb["xs"], cb["z"]
        grads[f"block{i}.c"] += scale * (ds * xs).sum(axis=0)
        grads[f"block{i}.skip_d"] += scale * (ds * z).sum(axis=0)
        lam = np.zeros_like(abar)
        dabar = np.zeros_like(abar)
        dbbar = np.zeros_like(abar)
        dz = np.empty_like(z)
        for t in range(z.shape[0] - 1, -1, -1):
            lam = blk.ssm.c * ds[t] + abar * lam
            if t > 0:
                dabar += lam * xs[t - 1]
            dbbar += lam * z[t]
            dz[t] = blk.ssm.skip_d * ds[t] + bbar * lam
        e_factor = (abar - 1.0) / a
        db_ssm = dbbar * e_factor
        de = dbbar * blk.ssm.b
        da = dabar * dt * abar + de * (dt * abar * a - abar + 1.0) / (a * a)
        ddt = dabar * a * abar + de * abar
        grads[f"block{i}.b"] += scale * db_ssm
        grads[f"block{i}.a_raw"] += scale * da * a
        grads[f"block{i}.log_dt"] += scale * ddt * dt

        # norm backward (scale-only layer norm)
        zhat, sigma = cb["zhat"], cb["sigma"]
        grads[f"block{i}.gain"] += scale * (dz * zhat).sum(axis=0)
        dzhat = dz * blk.gain
        du_norm = (
            dzhat
            - dzhat.mean(axis=1, keepdims=True)
            - zhat * (dzhat * zhat).mean(axis=1, keepdims=True)
        ) / sigma
        du = du + du_norm

    grads["w_in"] += scale * du.T @ cache["x"]
    grads["b_in"] += scale * du.sum(axis=0)


def backward(
    checkpoint: SsmCheckpoint,
    batch: list[tuple[np.ndarray, int]],
    gamma: float,
    train_mode: bool = False,
    rng_seed: int = 0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean focal loss over the batch and exact gradients for every parameter.

    Samples are processed in batch order; dropout (train mode) is seeded per
    sample from (rng_seed, sample_index) so results are bit-reproducible.
    """
    if not batch:
        raise ValueError("empty batch")
    params = checkpoint.params
    rate = checkpoint.config.dropout_rate
    grads = _zero_grads(params)
    total = 0.0
    scale = 1.0 / len(batch)
    for idx, (x, label) in enumerate(batch):
        rng = (
            np.random.default_rng(np.random.SeedSequence((rng_seed, idx)))
            if train_mode
            else None
        )
        logits, cache = _forward_cached(params, x, rate, train_mode, rng)
        loss, dlogits = focal_loss(logits, label, gamma)
        total += loss
        _backward_sample(params, cache, dlogits, rate, grads, scale)
    return total / len(batch), grads


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _adam_step(
    params: SsmParams,
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    weight_decay: float,
) -> None:
    """AdamW update (beta1=0.9, beta2=0.999, eps=1e-8, decoupled decay)."""
    state["t"] += 1
    t = state["t"]
    b1, b2, eps = 0.9, 0.999, 1e-8
    for name, arr in param_items(params):
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        arr -= lr * mhat / (np.sqrt(vhat) + eps)
        if weight_decay > 0.0 and name.rsplit(".", 1)[-1] not in _NO_DECAY:
            arr -= lr * weight_decay * arr

def _mean_eval_loss(
    checkpoint: SsmCheckpoint, samples: list[tuple[np.ndarray, int]], gamma: float
) -> float:
    total = 0.0
    for x, label in samples:
        logits = forward(checkpoint, x, train_mode=False)
        loss, _ = focal_loss(logits, label, gamma)
        total += loss
    return total / len(samples)


def train(
    model_cfg: ModelConfig,
    train_set: list[tuple[np.ndarray, int]],
    val_set: list[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    pipeline: dict | None = None,
) -> SsmCheckpoint:
    """Full-budget training; returns the checkpoint with the best val loss.

    Deterministic given cfg.seed: initialization, per-epoch shuffling and
    dropout all derive from it.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    for _, label in list(train_set) + list(val_set):
        if not 0 <= label < model_cfg.n_classes:
            raise ValueError(f"label {label} outside [0, {model_cfg.n_classes})")

    streams = np.random.SeedSequence(cfg.seed).generate_state(2)
    params = init_params(model_cfg, int(streams[0]))
    shuffle_rng = np.random.default_rng(int(streams[1]))
    ckpt = SsmCheckpoint(
        config=model_cfg,
        params=params,
        seed=cfg.seed,
        pipeline=dict(pipeline or {}),
    )
    adam = {
        "t": 0,
        "m": {n: np.zeros_like(a) for n, a in param_items(params)},
        "v": {n: np.zeros_like(a) for n, a in param_items(params)},
    }

    lr = cfg.lr
    best_loss = float("inf")
    best_params = None
    best_epoch = 0
    bad_epochs = 0
    gamma = model_cfg.focal_gamma
    log_rows = []

    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            idxs = order[lo : lo + cfg.batch_size]
            batch = [train_set[i] for i in idxs]
            drop_seed = int(
                np.random.SeedSequence((cfg.seed, epoch, bi)).generate_state(1)[0]
            )
            loss, grads = backward(
                ckpt, batch, gamma, train_mode=True, rng_seed=drop_seed
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(batch)
            _adam_step(params, grads, adam, lr, cfg.weight_decay)
        train_loss = epoch_loss / n
        val_loss = _mean_eval_loss(ckpt, val_set, gamma)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        log_rows.append((epoch, train_loss, val_loss, lr))

        if val_loss < best_loss:
            best_loss = val_loss
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.plateau_patience:
                lr *= cfg.lr_factor
                bad_epochs = 0

    if log_path is not None:
        with open(log_path, "w", encoding="ascii") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for epoch, tl, vl, elr in log_rows:
                fh.write(f"{epoch},{tl:.10g},{vl:.10g},{elr:.10g}\n")

    return SsmCheckpoint(
        config=model_cfg,
        params=best_params,
        epoch=best_epoch,
        best_val_loss=best_loss,
        seed=cfg.seed,
        pipeline=dict(pipeline or {}),
    )


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def predict(checkpoint: SsmCheckpoint, x: np.ndarray) -> tuple[int, np.ndarray]:
    """(argmax label, softmax probabilities); ties go to the smallest index."""
    probs = _softmax(forward(checkpoint, x, train_mode=False))
    return int(np.argmax(probs)), probs


def predict_windows(
    checkpoint: SsmCheckpoint, x: np.ndarray, window: int, stride: int
) -> list[int]:
    """One prediction per full window [i*stride, i*stride + window)."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[0]
    if not 1 <= window <= length:
        raise ValueError(f"window {window} outside [1, {length}]")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [
        predict(checkpoint, x[start : start + window])[0]
        for start in range(0, length - window + 1, stride)
    ]


# --------------------------------------------------------------------------
# checkpoint serialization
# --------------------------------------------------------------------------

def save_checkpoint(checkpoint: SsmCheckpoint, path: str | Path) -> None:
    meta = {
        "config": asdict(checkpoint.config),
        "epoch": checkpoint.epoch,
        "best_val_loss": checkpoint.best_val_loss,
        "seed": checkpoint.seed,
        "pipeline": checkpoint.pipeline,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MPCK_MAGIC)
        fh.write(struct.pack("<H", MPCK_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in param_items(checkpoint.params):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> SsmCheckpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != MPCK_MAGIC:
            raise ValueError(f"{path}: not an MPCK checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != MPCK_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (json_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(json_len).decode("utf-8"))
        config = ModelConfig(**meta["config"])
        params = init_params(config, 0)
        for name, arr in param_items(params):
            raw = fh.read(8 * arr.size)
            if len(raw) < 8 * arr.size:
                raise ValueError(f"{path}: truncated parameter block {name}")
            arr[...] = np.frombuffer(raw, dtype="<f8").reshape(arr.shape)
    return SsmCheckpoint(
        config=config,
        params=params,
        epoch=meta["epoch"],
        best_val_loss=meta["best_val_loss"],
        seed=meta["seed"],
        pipeline=meta.get("pipeline", {}),
    )
