"""Small dense network engine in numpy: trunk, heads, backprop, optimizers.

Parameters live in one flat float64 array (:class:`ModelParams`) carved into
named tensors, which keeps optimizer updates, checkpoints and finite
difference checks simple.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

PROB_FLOOR = 1e-12
CHECKPOINT_FORMAT = "ltvlab-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrunkConfig:
    """Shared trunk: embedding lookups concatenated to dense inputs, then ReLU layers."""

    dense_dim: int
    embeddings: tuple[tuple[int, int], ...] = ()
    hidden_dims: tuple[int, ...] = (128, 64)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "embeddings", tuple((int(c), int(w)) for c, w in self.embeddings))
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.dense_dim < 0:
            raise ConfigError("trunk.dense_dim: must be >= 0")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("trunk.hidden_dims: need at least one positive layer width")
        if any(c < 1 or w < 1 for c, w in self.embeddings):
            raise ConfigError("trunk.embeddings: cardinality and width must be positive")
        if self.activation != "relu":
            raise ConfigError(f"trunk.activation: only 'relu' is supported, got {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.dense_dim + sum(w for _, w in self.embeddings)

    @property
    def output_dim(self) -> int:
        return self.hidden_dims[-1]


class ModelParams:
    """Flat float64 parameter vector partitioned into named tensors.

    ``params[name]`` returns a writable view into ``params.flat``.
    """

    def __init__(self, shapes: Mapping[str, Sequence[int]], flat=None):
        self.shapes = {name: tuple(int(d) for d in shape) for name, shape in shapes.items()}
        self._slices = {}
        offset = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (offset, size)
            offset += size
        self.size = offset
        if flat is None:
            self.flat = np.zeros(offset)
        else:
            self.flat = np.array(flat, dtype=np.float64).reshape(-1)
            if self.flat.size != offset:
                raise ValueError(f"flat array has {self.flat.size} entries, partition needs {offset}")

    def __getitem__(self, name: str) -> np.ndarray:
        start, size = self._slices[name]
        return self.flat[start:start + size].reshape(self.shapes[name])

    def __contains__(self, name) -> bool:
        return name in self.shapes

    @property
    def names(self) -> list[str]:
        return list(self.shapes)

    def slice_of(self, name: str) -> slice:
        start, size = self._slices[name]
        return slice(start, start + size)

    def copy(self) -> "ModelParams":
        return ModelParams(self.shapes, self.flat)

    def with_flat(self, flat) -> "ModelParams":
        return ModelParams(self.shapes, flat)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.shapes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.flat, other.flat)

    def __repr__(self) -> str:
        return f"ModelParams({len(self.shapes)} tensors, {self.size} values)"


# ---------------------------------------------------------------------------
# Trunk forward / backward
# ---------------------------------------------------------------------------

def trunk_shapes(config: TrunkConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (card, width) in enumerate(config.embeddings):
        shapes[f"emb{i}"] = (card, width)
    fan_in = config.input_dim
    for l, width in enumerate(config.hidden_dims):
        shapes[f"trunk{l}.W"] = (fan_in, width)
        shapes[f"trunk{l}.b"] = (width,)
        fan_in = width
    return shapes


def _check_inputs(config: TrunkConfig, dense: np.ndarray, cats: np.ndarray) -> None:
    if dense.ndim != 2 or dense.shape[1] != config.dense_dim:
        raise ValueError(f"dense input must have shape (B, {config.dense_dim}), got {dense.shape}")
    n_emb = len(config.embeddings)
    if n_emb and (cats.ndim != 2 or cats.shape[1] < n_emb or cats.shape[0] != dense.shape[0]):
        raise ValueError(f"categorical input must have shape (B, >={n_emb}), got {cats.shape}")
    for i, (card, _) in enumerate(config.embeddings):
        col = cats[:, i]
        if col.size and (col.min() < 0 or col.max() >= card):
            raise ValueError(f"categorical column {i} has ids outside [0, {card})")


def forward(params: ModelParams, config: TrunkConfig, dense, cats=None):
    """Trunk forward pass. Returns ``(hidden, cache)``; hidden is (B, last width)."""
    dense = np.asarray(dense, dtype=np.float64)
    cats = np.zeros((dense.shape[0], 0), dtype=np.int64) if cats is None else np.asarray(cats)
    _check_inputs(config, dense, cats)
    parts = [dense]
    for i in range(len(config.embeddings)):
        parts.append(params[f"emb{i}"][cats[:, i]])
    h = np.concatenate(parts, axis=1) if len(parts) > 1 else dense
    inputs, pre = [], []
    for l in range(len(config.hidden_dims)):
        inputs.append(h)
        z = h @ params[f"trunk{l}.W"] + params[f"trunk{l}.b"]
        pre.append(z)
        h = np.maximum(z, 0.0)
    return h, {"cats": cats, "inputs": inputs, "pre": pre, "hidden": h}


def backward(params: ModelParams, config: TrunkConfig, cache, d_hidden, grad: ModelParams | None = None) -> ModelParams:
    """Accumulate trunk gradients for upstream ``d_hidden`` into ``grad``."""
    if grad is None:
        grad = params.zeros_like()
    d_h = np.asarray(d_hidden, dtype=np.float64)
    if d_h.shape != cache["hidden"].shape:
        raise ValueError(f"upstream gradient shape {d_h.shape} != hidden shape {cache['hidden'].shape}")
    for l in reversed(range(len(config.hidden_dims))):
        d_z = d_h * (cache["pre"][l] > 0)
        grad[f"trunk{l}.W"][...] += cache["inputs"][l].T @ d_z
        grad[f"trunk{l}.b"][...] += d_z.sum(axis=0)
        d_h = d_z @ params[f"trunk{l}.W"].T
    offset = config.dense_dim
    cats = cache["cats"]
    for i, (_, width) in enumerate(config.embeddings):
        np.add.at(grad[f"emb{i}"], cats[:, i], d_h[:, offset:offset + width])
        offset += width
    return grad


class Network:
    """Trunk plus parallel linear output heads of the given widths."""

    def __init__(self, config: TrunkConfig, head_widths: Sequence[int]):
        self.config = config
        self.head_widths = tuple(int(w) for w in head_widths)
        if not self.head_widths or any(w < 1 for w in self.head_widths):
            raise ConfigError("head widths must be positive")
        bounds = np.cumsum((0,) + self.head_widths)
        self.head_slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self.output_dim = int(bounds[-1])

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = trunk_shapes(self.config)
        for k, width in enumerate(self.head_widths):
            shapes[f"head{k}.W"] = (self.config.output_dim, width)
            shapes[f"head{k}.b"] = (width,)
        return shapes

    def init_params(self, seed: int | None = None) -> ModelParams:
        """Glorot-uniform weights and embeddings, zero biases."""
        seed = self.config.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
        params = ModelParams(self.param_shapes())
        for name, shape in params.shapes.items():
            if len(shape) == 2:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                params[name][...] = rng.uniform(-limit, limit, size=shape)
        return params

    def forward(self, params: ModelParams, dense, cats=None):
        hidden, cache = forward(params, self.config, dense, cats)
        out = np.concatenate(
            [hidden @ params[f"head{k}.W"] + params[f"head{k}.b"] for k in range(len(self.head_widths))],
            axis=1,
        )
        return out, cache

    def backward(self, params: ModelParams, cache, d_out) -> ModelParams:
        grad = params.zeros_like()
        hidden = cache["hidden"]
        d_hidden = np.zeros_like(hidden)
        for k, sl in enumerate(self.head_slices):
            d_k = d_out[:, sl]
            grad[f"head{k}.W"][...] = hidden.T @ d_k
            grad[f"head{k}.b"][...] = d_k.sum(axis=0)
            d_hidden += d_k @ params[f"head{k}.W"].T
        return backward(params, self.config, cache, d_hidden, grad)


# ---------------------------------------------------------------------------
# Softmax and cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits) -> np.ndarray:
    """Softmax over the last axis, with max subtraction."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input contains non-finite values")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(probs, label: int) -> float:
    """``-log p[label]`` with the probability clamped below at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise IndexError(f"label {label} outside [0, {p.shape[-1]})")
    return float(-math.log(max(float(p[label]), PROB_FLOOR)))


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    method: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ConfigError(f"optimizer method must be 'sgd' or 'adam', got {self.method!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")


def optimizer_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState):
    """One update of a flat parameter vector. Returns ``(new_params, state)``.

    A non-finite gradient aborts the step before any state is touched.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NumericError(f"non-finite gradient at {bad.size} coordinates (first index {bad[0]})")
    if state.method == "sgd":
        state.step += 1
        return params - state.lr * grads, state
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------

def _nudge_away_from_kinks(model, params: ModelParams, batch, margin: float, max_rounds: int = 100) -> ModelParams:
    # Shift trunk biases until no pre-activation of the batch sits within
    # `margin` of the ReLU kink.
    params = params.copy()
    config = model.network.config
    for _ in range(max_rounds):
        _, cache = forward(params, config, batch.dense, batch.cats)
        moved = False
        for l, z in enumerate(cache["pre"]):
            close = (np.abs(z) < margin).any(axis=0)
            if close.any():
                params[f"trunk{l}.b"][close] += 3.0 * margin
                moved = True
                break
        if not moved:
            break
    return params


def gradient_check(model, batch, epsilon: float = 1e-5, n_coords: int = 200, seed: int = 0,
                   params: ModelParams | None = None, margin: float = 1e-2, floor: float = 1e-7) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``model`` needs ``network`` and ``loss_and_grad(batch, params)``. The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps coordinates whose true gradient is zero from dividing
    round-off by zero. Up to ``n_coords`` coordinates are sampled (all of
    them if the model is smaller). Large ``epsilon`` such as 1e-1 may
    exceed the usual 1e-4 tolerance through truncation error.
    """
    params = model.params if params is None else params
    if params.size == 0:
        return 0.0
    params = _nudge_away_from_kinks(model, params, batch, margin)
    _, grad = model.loss_and_grad(batch, params)
    grad = grad.flat if isinstance(grad, ModelParams) else np.asarray(grad)
    rng = np.random.default_rng(seed)
    if params.size <= n_coords:
        coords = np.arange(params.size)
    else:
        coords = np.sort(rng.choice(params.size, size=n_coords, replace=False))
    worst = 0.0
    probe = params.copy()
    for j in coords:
        orig = probe.flat[j]
        probe.flat[j] = orig + epsilon
        up, _ = model.loss_and_grad(batch, probe)
        probe.flat[j] = orig - epsilon
        down, _ = model.loss_and_grad(batch, probe)
        probe.flat[j] = orig
        numeric = (up - down) / (2.0 * epsilon)
        rel = abs(grad[j] - numeric) / max(abs(grad[j]), abs(numeric), floor)
        worst = max(worst, rel)
    return float(worst)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, meta: Mapping | None = None) -> None:
    """Versioned text checkpoint: JSON header line, then one block per tensor.

    Values use Python's shortest round-trip float repr, so loading gives back
    the exact parameters and identical params always give identical bytes.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": [{"name": n, "shape": list(s)} for n, s in params.shapes.items()],
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for name, shape in params.shapes.items():
        values = params[name].reshape(-1)
        lines.append(f"# {name}")
        row = shape[-1] if shape else 1
        for start in range(0, values.size, max(row, 1)):
            lines.append(" ".join(repr(float(v)) for v in values[start:start + row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError):
        raise DataError(f"{path}: line 1: invalid checkpoint header") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: line 1: not an ltvlab checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: line 1: unsupported checkpoint version {header.get('version')!r}")
    shapes = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    params = ModelParams(shapes)
    lineno = 1
    for name, shape in shapes.items():
        if lineno >= len(lines) or lines[lineno] != f"# {name}":
            raise DataError(f"{path}: line {lineno + 1}: expected block for tensor {name!r}")
        lineno += 1
        size = int(np.prod(shape)) if shape else 1
        values: list[float] = []
        while len(values) < size:
            if lineno >= len(lines):
                raise DataError(f"{path}: tensor {name!r} truncated")
            try:
                values.extend(float(v) for v in lines[lineno].split())
            except ValueError:
                raise DataError(f"{path}: line {lineno + 1}: non-numeric value in {name!r}") from None
            lineno += 1
        if len(values) != size:
            raise DataError(f"{path}: tensor {name!r} has {len(values)} values, expected {size}")
        params[name][...] = np.asarray(values).reshape(shape)
    return params, header.get("meta", {})
