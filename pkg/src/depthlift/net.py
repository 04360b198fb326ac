"""Residual dense lifting network with hand-written backpropagation and Adam.

Layout: Dense(in -> H), then ``n_residual_blocks`` x {[Dense, BN, ReLU, Dropout] x 2 + skip},
then Dense(H -> out). Batches are row-major: x is (B, input_dim).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import N_JOINTS

MODEL_VERSION = "depthlift-net-v1"


class CacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetConfig:
    n_joints: int = N_JOINTS
    hidden_width: int = 256
    n_residual_blocks: int = 2
    dropout_rate: float = 0.5
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    activation: str = "relu"
    use_depth: bool = True

    def __post_init__(self):
        if self.hidden_width < 8:
            raise ValueError("hidden_width must be >= 8")
        if self.n_residual_blocks < 0:
            raise ValueError("n_residual_blocks must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.activation != "relu":
            raise ValueError("only relu is supported")
        if self.n_joints < 2:
            raise ValueError("need at least 2 joints")

    @property
    def input_dim(self):
        return (3 if self.use_depth else 2) * self.n_joints

    @property
    def output_dim(self):
        return 3 * (self.n_joints - 1)


DESK_PRESET = NetConfig(hidden_width=256, n_residual_blocks=2)
FULL_PRESET = NetConfig(hidden_width=1024, n_residual_blocks=3)


def _layer_names(cfg: NetConfig):
    return [(f"b{i}.{k}") for i in range(cfg.n_residual_blocks) for k in range(2)]


@dataclass
class NetParams:
    config: NetConfig
    weights: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)

    def copy(self):
        return NetParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                         {k: v.copy() for k, v in self.running.items()})

    @property
    def n_params(self):
        return sum(v.size for v in self.weights.values())

    @property
    def dtype(self):
        return self.weights["in.W"].dtype


def xavier_init(cfg: NetConfig, seed: int, dtype=np.float64) -> NetParams:
    rng = np.random.default_rng(seed)
    H = cfg.hidden_width

    def dense(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype), np.zeros(fan_out, dtype)

    w, run = {}, {}
    w["in.W"], w["in.b"] = dense(cfg.input_dim, H)
    for name in _layer_names(cfg):
        w[f"{name}.W"], w[f"{name}.b"] = dense(H, H)
        w[f"{name}.gamma"] = np.ones(H, dtype)
        w[f"{name}.beta"] = np.zeros(H, dtype)
        run[f"{name}.mean"] = np.zeros(H, dtype)
        run[f"{name}.var"] = np.ones(H, dtype)
    w["out.W"], w["out.b"] = dense(H, cfg.output_dim)
    return NetParams(cfg, w, run)


def forward(params: NetParams, x, mode: str = "infer", rng=None):
    """Returns (y_hat, cache). Train mode uses batch statistics and inverted dropout."""
    cfg, w = params.config, params.weights
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected input of shape (B, {cfg.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite network input")
    train = mode == "train"
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if train and x.shape[0] < 2:
        raise ValueError("train mode needs a batch of at least 2 for batch statistics")
    if train and cfg.dropout_rate > 0 and rng is None:
        rng = np.random.default_rng()
    eps, p = cfg.bn_epsilon, cfg.dropout_rate

    layers = []
    batch_stats = {}
    h = x @ w["in.W"] + w["in.b"]
    for i in range(cfg.n_residual_blocks):
        skip = h
        for k in range(2):
            name = f"b{i}.{k}"
            inp = h
            a = inp @ w[f"{name}.W"] + w[f"{name}.b"]
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                batch_stats[name] = (mu, var)
            else:
                mu = params.running[f"{name}.mean"]
                var = params.running[f"{name}.var"]
            inv_std = 1.0 / np.sqrt(var + eps)
            xhat = (a - mu) * inv_std
            pre = w[f"{name}.gamma"] * xhat + w[f"{name}.beta"]
            act = np.maximum(pre, 0)
            mask = None
            if train and p > 0:
                mask = (rng.random(act.shape) >= p).astype(act.dtype) / (1.0 - p)
                act = act * mask
            layers.append((name, inp, xhat, inv_std, pre, mask))
            h = act
        h = h + skip
    y = h @ w["out.W"] + w["out.b"]
    cache = {"mode": mode, "x": x, "layers": layers, "h_last": h, "batch_stats": batch_stats,
             "owner": id(params), "shapes": {k: v.shape for k, v in w.items()}}
    return y, cache


def loss_reconstruction(y_hat, y, n_joints: int = N_JOINTS) -> float:
    """Batch mean of (1/J) * sum over joints of squared Euclidean error."""
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    y_hat = y_hat.reshape(len(y_hat), -1)
    y = y.reshape(len(y), -1)
    return float(np.sum((y_hat - y) ** 2) / (len(y) * n_joints))


def backward(params: NetParams, cache, y_hat, y):
    """Gradients of ``loss_reconstruction(y_hat, y)`` w.r.t. every trainable tensor."""
    if cache.get("mode") != "train":
        raise CacheError("backward needs a cache from a train-mode forward pass")
    if cache.get("owner") != id(params) or cache["shapes"] != {k: v.shape for k, v in params.weights.items()}:
        raise CacheError("cache does not belong to these parameters")
    cfg, w = params.config, params.weights
    y_hat = np.asarray(y_hat)
    y = np.asarray(y, dtype=y_hat.dtype).reshape(y_hat.shape)
    B = y_hat.shape[0]
    g = {}
    dy = 2.0 * (y_hat - y) / (B * cfg.n_joints)
    g["out.W"] = cache["h_last"].T @ dy
    g["out.b"] = dy.sum(axis=0)
    dh = dy @ w["out.W"].T

    layers = cache["layers"]
    for i in reversed(range(cfg.n_residual_blocks)):
        d_skip = dh
        for k in (1, 0):
            name, inp, xhat, inv_std, pre, mask = layers[2 * i + k]
            d_act = dh if mask is None else dh * mask
            d_pre = d_act * (pre > 0)
            g[f"{name}.gamma"] = np.sum(d_pre * xhat, axis=0)
            g[f"{name}.beta"] = d_pre.sum(axis=0)
            dxhat = d_pre * w[f"{name}.gamma"]
            da = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
            g[f"{name}.W"] = inp.T @ da
            g[f"{name}.b"] = da.sum(axis=0)
            dh = da @ w[f"{name}.W"].T
        dh = dh + d_skip
    g["in.W"] = cache["x"].T @ dh
    g["in.b"] = dh.sum(axis=0)
    return g


def update_running(params: NetParams, cache) -> NetParams:
    """New params whose BN running statistics absorb the batch statistics of ``cache``."""
    m = params.config.bn_momentum
    running = dict(params.running)
    for name, (mu, var) in cache["batch_stats"].items():
        running[f"{name}.mean"] = m * params.running[f"{name}.mean"] + (1 - m) * mu
        running[f"{name}.var"] = m * params.running[f"{name}.var"] + (1 - m) * var
    return NetParams(params.config, params.weights, running)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetParams):
        return cls({k: np.zeros_like(v) for k, v in params.weights.items()},
                   {k: np.zeros_like(v) for k, v in params.weights.items()}, 0)


def adam_step(params: NetParams, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    for k, gk in grads.items():
        if gk.shape != params.weights[k].shape:
            raise ValueError(f"gradient {k} has shape {gk.shape}, expected {params.weights[k].shape}")
        if not np.all(np.isfinite(gk)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_w, new_m, new_v = {}, {}, {}
    for k, wk in params.weights.items():
        gk = grads[k]
        m = beta1 * state.m[k] + (1 - beta1) * gk
        v = beta2 * state.v[k] + (1 - beta2) * gk * gk
        with np.errstate(over="ignore", invalid="ignore"):
            new_w[k] = (wk - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(wk.dtype)
        if not np.all(np.isfinite(new_w[k])):
            raise FloatingPointError(f"update for {k} overflowed")
        new_m[k], new_v[k] = m.astype(wk.dtype), v.astype(wk.dtype)
    return NetParams(params.config, new_w, params.running), AdamState(new_m, new_v, t)


def _pack(arrays):
    return {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in arrays.items()}


def _unpack(d, dtype):
    return {k: np.asarray(v["data"], dtype=dtype).reshape(v["shape"]) for k, v in d.items()}


def save_model(path, params: NetParams, norm_stats) -> None:
    doc = {"version": MODEL_VERSION, "config": asdict(params.config),
           "dtype": np.dtype(params.dtype).name,
           "norm_stats": _pack(norm_stats.as_dict()),
           "tensors": _pack(params.weights), "running": _pack(params.running)}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    """Returns (NetParams, NormStats)."""
    from .training import NormStats

    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    dtype = np.dtype(doc.get("dtype", "float64"))
    cfg = NetConfig(**doc["config"])
    params = NetParams(cfg, _unpack(doc["tensors"], dtype), _unpack(doc["running"], dtype))
    ref = xavier_init(cfg, 0, dtype)
    for k, v in ref.weights.items():
        if params.weights.get(k) is None or params.weights[k].shape != v.shape:
            raise ValueError(f"{path}: tensor {k} missing or mis-shaped")
    return params, NormStats.from_dict(_unpack(doc["norm_stats"], np.float64))
