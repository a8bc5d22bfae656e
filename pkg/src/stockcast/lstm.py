"""Stacked LSTM regressor in numpy: forward pass, BPTT, inverted dropout, Adam.

Layout follows the usual Keras-style stack::

    LSTM -> Dropout -> LSTM -> Dropout -> ... -> LSTM -> Dropout -> Dense(1)

Intermediate layers emit their full hidden sequence, the last one only its
final hidden state.  Gate weights of a layer are stored concatenated along
the output axis in the order forget, input, candidate, output, so
``Wx[:, :H]`` is W_fx, ``Wh[:, H:2H]`` is W_ih and so on.

Loss is mean squared error on min-max normalized targets.
"""
from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .dataset import WindowedDataset

log = logging.getLogger(__name__)

GATES = ("f", "i", "c", "o")
FORGET_BIAS = 1.0


class TrainingDiverged(RuntimeError):
    pass


def sigmoid(x):
    return expit(x)


@dataclass
class LstmLayerParams:
    Wx: np.ndarray  # (input, 4H)
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def units(self) -> int:
        return self.Wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.Wx.shape[0]

    def gate(self, name: str):
        """(W_gh, W_gx, b_g) for gate ``name`` in f, i, c, o; views, not copies."""
        H = self.units
        k = GATES.index(name)
        s = slice(k * H, (k + 1) * H)
        return self.Wh[:, s], self.Wx[:, s], self.b[s]

    def check(self):
        H = self.units
        if self.Wh.shape != (H, 4 * H) or self.Wx.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ValueError("inconsistent LSTM layer dimensions")
        for a in (self.Wx, self.Wh, self.b):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite LSTM parameters")


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, units: int, batch: Optional[int] = None) -> "CellState":
        shape = (units,) if batch is None else (batch, units)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class CellCache:
    act: np.ndarray  # [f, i, c~, o] concatenated along the last axis
    tanh_c: np.ndarray

    def _part(self, k):
        H = self.act.shape[-1] // 4
        return self.act[..., k * H:(k + 1) * H]

    f = property(lambda self: self._part(0))
    i = property(lambda self: self._part(1))
    g = property(lambda self: self._part(2))  # candidate c~
    o = property(lambda self: self._part(3))


@functools.lru_cache(maxsize=None)
def _gate_affine(H):
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so all four gates need one tanh:
    # act = tanh(z * scale) * scale + shift
    scale = np.full(4 * H, 0.5)
    scale[2 * H:3 * H] = 1.0
    shift = np.full(4 * H, 0.5)
    shift[2 * H:3 * H] = 0.0
    return scale, shift


def _step(z, c_prev, act, prescaled=False):
    """Gate nonlinearities and state update; writes activations into ``act``.

    With ``prescaled`` the sigmoid-gate pre-activations in ``z`` are already
    halved (the packed weights carry the factor).
    """
    H = c_prev.shape[-1]
    scale, shift = _gate_affine(H)
    if prescaled:
        np.tanh(z, out=act)
    else:
        np.multiply(z, scale, out=act)
        np.tanh(act, out=act)
    act *= scale
    act += shift
    c = act[..., :H] * c_prev + act[..., H:2 * H] * act[..., 2 * H:3 * H]
    tanh_c = np.tanh(c)
    return c, tanh_c, act[..., 3 * H:] * tanh_c


def cell_forward(layer: LstmLayerParams, x, prev: CellState):
    """One LSTM step on ``x`` of shape (input,) or (batch, input).

    Returns the new CellState and the cached gate activations.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.input_size or prev.h.shape[-1] != layer.units:
        raise ValueError(f"input size {x.shape[-1]} != layer input {layer.input_size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite LSTM input")
    z = x @ layer.Wx + prev.h @ layer.Wh + layer.b
    act = np.empty_like(z)
    c, tanh_c, h = _step(z, prev.c, act)
    return CellState(h, c), CellCache(act, tanh_c)


def dropout(values, rate: float, mode: str = "train", rng=None):
    """Inverted dropout; identity in ``infer`` mode or at rate 0."""
    return _dropout(values, rate, mode, rng)[0]


def _dropout(values, rate, mode, rng):
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    values = np.asarray(values, dtype=np.float64)
    if mode != "train" or rate == 0.0:
        return values, None
    mask = (rng.random(values.shape) >= rate) / (1.0 - rate)
    return values * mask, mask


@dataclass
class LstmStack:
    """Parameters of the full network, keyed ``layer{k}.{Wx,Wh,b}`` and ``dense.{W,b}``."""

    params: dict
    dropout_rates: list
    window: int
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.dropout_rates)

    @property
    def units(self) -> list[int]:
        return [self.params[f"layer{k}.Wh"].shape[0] for k in range(self.n_layers)]

    def layer(self, k: int) -> LstmLayerParams:
        p = self.params
        return LstmLayerParams(p[f"layer{k}.Wx"], p[f"layer{k}.Wh"], p[f"layer{k}.b"])

    def with_params(self, params: dict) -> "LstmStack":
        return LstmStack(params, list(self.dropout_rates), self.window, self.seed)

    def copy(self) -> "LstmStack":
        return self.with_params({k: v.copy() for k, v in self.params.items()})

    def check(self):
        inp = 1
        for k in range(self.n_layers):
            layer = self.layer(k)
            layer.check()
            if layer.input_size != inp:
                raise ValueError(f"layer {k} expects input {layer.input_size}, gets {inp}")
            inp = layer.units
        if self.params["dense.W"].shape != (inp,) or self.params["dense.b"].shape != (1,):
            raise ValueError("dense head must map the last layer's units to one output")


def init_stack(
    units=(100, 100, 100),
    dropout_rates=None,
    window: int = 60,
    seed: int = 0,
    input_size: int = 1,
) -> LstmStack:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases except forget = 1."""
    units = list(units)
    if dropout_rates is None:
        dropout_rates = [0.1] * len(units)
    elif np.isscalar(dropout_rates):
        dropout_rates = [float(dropout_rates)] * len(units)
    if len(dropout_rates) != len(units) or not units:
        raise ValueError("need one dropout rate per LSTM layer")
    rng = np.random.default_rng(seed)
    params = {}
    inp = input_size
    for k, H in enumerate(units):
        lim = 1.0 / math.sqrt(H)
        params[f"layer{k}.Wx"] = rng.uniform(-lim, lim, (inp, 4 * H))
        params[f"layer{k}.Wh"] = rng.uniform(-lim, lim, (H, 4 * H))
        b = np.zeros(4 * H)
        b[:H] = FORGET_BIAS
        params[f"layer{k}.b"] = b
        inp = H
    lim = 1.0 / math.sqrt(inp)
    params["dense.W"] = rng.uniform(-lim, lim, inp)
    params["dense.b"] = np.zeros(1)
    stack = LstmStack(params, [float(r) for r in dropout_rates], window, seed)
    stack.check()
    return stack


@dataclass
class _Packed:
    """All layers padded to common sizes so they can advance together.

    ``W[k]`` stacks the padded input weights (first ``I`` rows) over the
    padded recurrent weights (next ``H`` rows); gate g of a real unit j sits
    in column ``g * H + j``.  Padded units have zero weights and bias, so
    their cell and hidden states stay exactly zero.  Sigmoid-gate columns
    are stored halved (see ``_step``); ``WT`` holds the unscaled transpose
    for the backward pass.
    """

    W: np.ndarray  # (L, I + H, 4H), sigmoid columns halved
    b: np.ndarray  # (L, 4H), sigmoid entries halved
    WT: np.ndarray  # (L, 4H, I + H), unscaled
    I: int
    H: int
    cols: list  # per layer: padded column index of each real gate column


def _pack(stack: LstmStack) -> _Packed:
    units = stack.units
    L = len(units)
    H = max(units)
    I = max([1] + units[:-1])
    W = np.zeros((L, I + H, 4 * H))
    b = np.zeros((L, 4 * H))
    cols = []
    for k, Hk in enumerate(units):
        c = np.concatenate([g * H + np.arange(Hk) for g in range(4)])
        layer = stack.layer(k)
        W[k, :layer.input_size, c] = layer.Wx.T
        W[k, I:I + Hk, c] = layer.Wh.T
        b[k, c] = layer.b
        cols.append(c)
    WT = np.ascontiguousarray(W.transpose(0, 2, 1))
    scale = _gate_affine(H)[0]
    return _Packed(W * scale, b * scale, WT, I, H, cols)


@dataclass
class ForwardCache:
    """Everything ``backward`` needs, stored by wave.

    Layer k processes timestep t at wave s = t + k; ``U`` is indexed
    ``[k, s]``, the other arrays ``[s, k]``.  Entries for (s, k) with t
    outside 0..T-1 are junk and get zero gradient.
    """

    packed: _Packed
    U: np.ndarray  # (L, S, B, I + H) layer inputs and previous hidden states
    A: np.ndarray  # (S, L, B, 4H) gate activations
    Cp: np.ndarray  # (S, L, B, H) previous cell states
    TC: np.ndarray  # (S, L, B, H) tanh of new cell states
    M: Optional[np.ndarray]  # (S, L, B, H) dropout masks on layer outputs
    head_mask: Optional[np.ndarray]
    head_input: np.ndarray
    T: int
    param_ids: tuple


def _draw_masks(stack, T, B, mode, rng):
    """Dropout masks in layer order: (T, B, H_k) per inner layer, (B, H_L) at the head."""
    masks = []
    for k, (H, rate) in enumerate(zip(stack.units, stack.dropout_rates)):
        shape = (T, B, H) if k < stack.n_layers - 1 else (B, H)
        masks.append(_dropout(np.ones(shape), rate, mode, rng)[1])
    return masks


def stack_forward(stack: LstmStack, windows, mode: str = "infer", rng=None, keep_cache=True):
    """Predict from one window (shape (T,)) or a batch (shape (B, T)).

    Returns ``(prediction, cache)``; prediction is a float for a single
    window and a (B,) array for a batch.  In ``train`` mode dropout masks
    are drawn from ``rng``.  ``keep_cache=False`` skips the per-wave
    storage (the returned cache is then None).
    """
    X = np.asarray(windows, dtype=np.float64)
    batched = X.ndim == 2
    if not batched:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != stack.window:
        raise ValueError(f"expected windows of length {stack.window}, got shape {np.shape(windows)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite LSTM input")
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    B, T = X.shape
    L = stack.n_layers
    S = T + L - 1
    pk = _pack(stack)
    I, H = pk.I, pk.H

    masks = _draw_masks(stack, T, B, mode, rng)
    M = None
    if any(m is not None for m in masks[:-1]):
        M = np.ones((S, L, B, H))
        for k, m in enumerate(masks[:-1]):
            if m is not None:
                M[k:k + T, k, :, :m.shape[-1]] = m

    keep = S if keep_cache else 1
    U = np.zeros((L, keep if keep_cache else 2, B, I + H))
    A = np.empty((keep, L, B, 4 * H))
    Cp = np.empty((keep, L, B, H))
    TC = np.empty((keep, L, B, H))
    h = np.zeros((L, B, H))
    c = np.zeros((L, B, H))
    W = pk.W
    bias = pk.b[:, None, :]
    for s in range(S):
        j = s if keep_cache else 0
        u = U[:, s if keep_cache else s % 2]
        if s < T:
            u[0, :, 0] = X[:, s]
        u[:, :, I:] = h
        Cp[j] = c
        z = np.matmul(u, W)
        z += bias
        c, TC[j], h = _step(z, c, A[j], prescaled=True)
        if s < L - 1:
            h[s + 1:] = 0.0
            c[s + 1:] = 0.0
        if s + 1 < S and L > 1:
            nxt = h[:-1, :, :I] if M is None else h[:-1, :, :I] * M[s, :-1, :, :I]
            U[1:, s + 1 if keep_cache else (s + 1) % 2, :, :I] = nxt
    last = h[L - 1, :, :stack.units[-1]]
    head_mask = masks[-1]
    head_in = last if head_mask is None else last * head_mask
    y = head_in @ stack.params["dense.W"] + stack.params["dense.b"][0]
    cache = None
    if keep_cache:
        cache = ForwardCache(pk, U, A, Cp, TC, M, head_mask, head_in, T,
                             tuple(id(v) for v in stack.params.values()))
    return (y if batched else float(y[0])), cache


def predict(stack: LstmStack, windows, batch_size: int = 512) -> np.ndarray:
    """Inference-mode predictions for a (B, T) array of windows."""
    X = np.asarray(windows, dtype=np.float64)
    out = [
        stack_forward(stack, X[s:s + batch_size], keep_cache=False)[0]
        for s in range(0, len(X), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros(0)


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("empty loss input")
    return float(np.mean((p - t) ** 2))


def backward(stack: LstmStack, cache: ForwardCache, loss_grad) -> dict:
    """Gradients of the loss w.r.t. every parameter, by BPTT.

    ``loss_grad`` is dLoss/dprediction: a scalar for a single window or a
    (B,) array for a batch.
    """
    if cache.param_ids != tuple(id(v) for v in stack.params.values()):
        raise ValueError("cache was produced by a different parameter set")
    dy = np.asarray(loss_grad, dtype=np.float64).reshape(-1)
    B = cache.head_input.shape[0]
    if dy.size != B:
        raise ValueError(f"loss gradient has {dy.size} entries for a batch of {B}")
    pk, U, A, Cp, TC, M = cache.packed, cache.U, cache.A, cache.Cp, cache.TC, cache.M
    S, L = A.shape[:2]
    I, H, T = pk.I, pk.H, cache.T

    grads = {
        "dense.W": cache.head_input.T @ dy,
        "dense.b": np.array([dy.sum()]),
    }
    d_last = np.zeros((B, H))
    HL = stack.units[-1]
    d_last[:, :HL] = dy[:, None] * stack.params["dense.W"][None, :]
    if cache.head_mask is not None:
        d_last[:, :HL] *= cache.head_mask

    A4 = A.reshape(S, L, B, 4, H)
    f, i, g, o = (A4[..., j, :] for j in range(4))
    # dLoss/dz = [dc, dc, dc, dh] * mult, with mult fixed by the forward pass
    mult = A4 * (1.0 - A4)
    mult[..., 2, :] = 1.0 - g * g
    mult[..., 0, :] *= Cp
    mult[..., 1, :] *= g
    mult[..., 2, :] *= i
    mult[..., 3, :] *= TC
    dc_from_dh = o * (1.0 - TC * TC)

    WT = pk.WT
    dZ = np.zeros((L, S, B, 4, H))
    dU = np.zeros((L, B, I + H))
    dc_next = np.zeros((L, B, H))
    for s in range(S - 1, -1, -1):
        dh = dU[:, :, I:].copy()
        if L > 1:
            above = dU[1:, :, :I]
            if M is not None:
                above = above * M[s, :-1, :, :I]
            dh[:-1, :, :I] += above
        if s == S - 1:
            dh[L - 1] += d_last
        dc = dc_next + dh * dc_from_dh[s]
        dz = np.empty((L, B, 4, H))
        np.multiply(dc[:, :, None, :], mult[s, :, :, :3], out=dz[:, :, :3])
        np.multiply(dh, mult[s, :, :, 3], out=dz[:, :, 3])
        if s < L - 1:
            dz[s + 1:] = 0.0  # layers that have not started yet
        dZ[:, s] = dz
        dc_next = dc * f[s]
        dU = np.matmul(dz.reshape(L, B, 4 * H), WT)

    dZf = dZ.reshape(L, S * B, 4 * H)
    Uf = U.reshape(L, S * B, I + H)
    dW = np.matmul(Uf.transpose(0, 2, 1), dZf)
    db = dZf.sum(axis=1)
    for k in range(L):
        layer = stack.layer(k)
        c = pk.cols[k]
        grads[f"layer{k}.Wx"] = dW[k, :layer.input_size][:, c]
        grads[f"layer{k}.Wh"] = dW[k, I:I + layer.units][:, c]
        grads[f"layer{k}.b"] = db[k, c]
    return {name: grads[name] for name in stack.params}


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig, t: int):
    """Bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2, lr, eps = config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_epsilon
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_params[k] = p - lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
    return new_params, AdamState(m, v, t)


@dataclass
class TrainHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path) -> Path:
        path = Path(path)
        lines = ["epoch,train_mse,val_mse"]
        lines += [f"{e + 1},{tr!r},{va!r}" for e, (tr, va) in enumerate(zip(self.train_mse, self.val_mse))]
        path.write_text("\n".join(lines) + "\n")
        return path


def train(
    stack: LstmStack,
    train_set: WindowedDataset,
    val_set: WindowedDataset,
    config: TrainConfig,
    progress=None,
):
    """Mini-batch Adam on MSE; returns the best-validation snapshot and the history.

    One seeded generator drives shuffling and dropout masks in a fixed
    order, so identical inputs give bit-identical results.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if train_set.window != stack.window or val_set.window != stack.window:
        raise ValueError("dataset window does not match the stack lookback")
    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in stack.params.items()}
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best_val, best_params = np.inf, params
    X, y = train_set.inputs, train_set.targets
    n = len(y)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            current = stack.with_params(params)
            pred, cache = stack_forward(current, X[idx], mode="train", rng=rng)
            err = pred - y[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, step {step + 1}; "
                    f"try a lower learning rate (now {config.learning_rate})"
                )
            total += loss * len(idx)
            grads = backward(current, cache, 2.0 * err / len(idx))
            step += 1
            params, state = adam_step(params, grads, state, config, step)
        val = mse_loss(predict(stack.with_params(params), val_set.inputs), val_set.targets)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch + 1}")
        history.train_mse.append(total / n)
        history.val_mse.append(val)
        if val < best_val:
            best_val, best_params, history.best_epoch = val, params, epoch + 1
        if progress:
            progress(epoch + 1, total / n, val)
        log.debug("epoch %d train %.6g val %.6g", epoch + 1, total / n, val)
    return stack.with_params({k: v.copy() for k, v in best_params.items()}), history


def multi_sequence_predict(stack: LstmStack, seed_window, actuals) -> np.ndarray:
    """One-step predictions over ``actuals`` with the window advanced on actuals.

    Step k predicts from the last ``window`` values of
    ``seed_window + actuals[:k]``; predictions are never fed back, so all
    steps can be evaluated as one batch.
    """
    seed_window = np.asarray(seed_window, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if len(seed_window) != stack.window:
        raise ValueError(f"seed window must have {stack.window} values")
    if len(actuals) == 0:
        raise ValueError("no actuals to predict")
    joined = np.concatenate([seed_window, actuals[:-1]])
    windows = np.lib.stride_tricks.sliding_window_view(joined, stack.window)
    return predict(stack, windows)


def save_checkpoint(stack: LstmStack, path, config: Optional[TrainConfig] = None, **extra) -> Path:
    """Keyed JSON checkpoint; floats are written with round-trip precision."""
    payload = {
        "kind": "lstm",
        "window": stack.window,
        "seed": stack.seed,
        "units": stack.units,
        "dropout_rates": stack.dropout_rates,
        "train_config": asdict(config) if config else None,
        **extra,
        "params": {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
            for k, v in stack.params.items()
        },
    }
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    """Returns ``(stack, metadata)``."""
    payload = json.loads(Path(path).read_text())
    if payload.get("kind") != "lstm":
        raise ValueError(f"{path} is not an LSTM checkpoint")
    params = {
        k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
        for k, v in payload["params"].items()
    }
    # restore canonical key order: layers first, then dense
    n = len(payload["units"])
    keys = [f"layer{k}.{w}" for k in range(n) for w in ("Wx", "Wh", "b")] + ["dense.W", "dense.b"]
    stack = LstmStack({k: params[k] for k in keys}, payload["dropout_rates"],
                      payload["window"], payload["seed"])
    stack.check()
    meta = {k: v for k, v in payload.items() if k != "params"}
    return stack, meta
