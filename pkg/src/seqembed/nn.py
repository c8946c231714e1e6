"""Differentiable layer primitives with hand-written backward passes.

Layers operate on batches of masked sequences: an array ``x`` of shape
``(B, T, C)`` plus an integer array ``lens`` of shape ``(B,)`` giving each
example's valid length. Rows at or beyond an example's valid length are
zero on output and never influence any valid output.

Every layer trims its input to ``max(lens)`` before computing, so the amount
of trailing padding never changes the arithmetic performed. Outputs are then
zero-padded back to the nominal length implied by the input's ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, PreconditionError


def out_length(length, kernel: int, stride: int):
    """Valid length after a strided window layer: ``floor((len - k) / s) + 1``."""
    return (np.asarray(length) - kernel) // stride + 1


# --------------------------------------------------------------------------
# containers


class Parameter:
    """A trainable tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "adam_m", "adam_v")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter(shape={self.value.shape})"


@dataclass
class MaskedSequence:
    """A single ``T x C`` sequence whose rows past ``valid_len`` are zero."""

    steps: np.ndarray
    valid_len: int

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64)
        if self.steps.ndim == 1:
            self.steps = self.steps[:, None]
        T = self.steps.shape[0]
        if not 1 <= self.valid_len <= T:
            raise PreconditionError(f"valid_len {self.valid_len} outside [1, {T}]")
        if np.any(self.steps[self.valid_len :]):
            raise PreconditionError("rows beyond valid_len must be zero")

    @property
    def shape(self):
        return self.steps.shape

    def valid(self) -> np.ndarray:
        return self.steps[: self.valid_len]

    def batch(self):
        return self.steps[None], np.array([self.valid_len])


def step_mask(lens, T: int) -> np.ndarray:
    """Boolean ``(B, T)`` mask that is True on valid steps."""
    return np.arange(T)[None, :] < np.asarray(lens)[:, None]


def _trim(x, lens):
    t = int(np.max(lens))
    return x[:, :t]


def _pad_to(y, T: int):
    if y.shape[1] == T:
        return y
    out = np.zeros((y.shape[0], T) + y.shape[2:], dtype=y.dtype)
    out[:, : y.shape[1]] = y
    return out


# --------------------------------------------------------------------------
# initialization


def glorot_uniform(rng, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --------------------------------------------------------------------------
# layers


class Layer:
    name = "layer"

    def parameters(self) -> dict[str, Parameter]:
        return {}


class Conv1D(Layer):
    """Valid 1D convolution over the step axis. Weights have shape ``(K, Cin, F)``."""

    def __init__(self, kernel: int, in_channels: int, filters: int, stride: int = 1,
                 rng=None, name: str = "conv"):
        if min(kernel, in_channels, filters, stride) <= 0:
            raise ConfigError(f"{name}: kernel, channels, filters and stride must be positive")
        self.kernel = kernel
        self.stride = stride
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (kernel, in_channels, filters),
                                               kernel * in_channels, kernel * filters))
        self.bias = Parameter(np.zeros(filters))
        self.input_grad = True
        self._cache = None

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, lens):
        lens = np.asarray(lens)
        K, s = self.kernel, self.stride
        if np.any(lens < K):
            raise PreconditionError(
                f"{self.name}: valid length {int(lens.min())} shorter than kernel {K}")
        T_nominal = int(out_length(x.shape[1], K, s))
        xt = _trim(x, lens)
        B, T, C = xt.shape
        out_lens = out_length(lens, K, s)
        Tp = int(out_length(T, K, s))
        # (B, Tp, C, K) -> (B, Tp, K, C)
        win = np.lib.stride_tricks.sliding_window_view(xt, K, axis=1)[:, ::s][:, :Tp]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * Tp, K * C)
        W = self.weight.value.reshape(K * C, -1)
        y = (cols @ W + self.bias.value).reshape(B, Tp, -1)
        mask = step_mask(out_lens, Tp)
        y *= mask[:, :, None]
        self._cache = (cols, mask, B, T, C, Tp, x.shape[1])
        return _pad_to(y, T_nominal), out_lens

    def backward(self, dy):
        cols, mask, B, T, C, Tp, T_in = self._cache
        K, s = self.kernel, self.stride
        dy = dy[:, :Tp] * mask[:, :, None]
        F = dy.shape[2]
        dy2 = dy.reshape(B * Tp, F)
        self.weight.grad += (cols.T @ dy2).reshape(self.weight.value.shape)
        self.bias.grad += dy2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (dy2 @ self.weight.value.reshape(K * C, F).T).reshape(B, Tp, K, C)
        return kernels.col2im_add(dcols, s, T_in)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, lens=None):
        self._pos = x > 0
        return np.where(self._pos, x, 0.0), lens

    def backward(self, dy):
        # gradient at exactly zero is zero
        return dy * self._pos


class MaxPool1D(Layer):
    """Per-channel max over strided windows; ties route to the lowest index."""

    def __init__(self, kernel: int, stride: int, name: str = "maxpool"):
        if kernel <= 0 or stride <= 0:
            raise ConfigError(f"{name}: kernel and stride must be positive")
        self.kernel = kernel
        self.stride = stride
        self.name = name

    def forward(self, x, lens):
        lens = np.asarray(lens)
        K, s = self.kernel, self.stride
        if np.any(lens < K):
            raise PreconditionError(
                f"{self.name}: valid length {int(lens.min())} shorter than kernel {K}")
        T_nominal = int(out_length(x.shape[1], K, s))
        xt = _trim(x, lens)
        B, T, C = xt.shape
        out_lens = out_length(lens, K, s)
        Tp = int(out_length(T, K, s))
        win = np.lib.stride_tricks.sliding_window_view(xt, K, axis=1)[:, ::s][:, :Tp]
        arg = np.argmax(win, axis=3)  # first occurrence on ties
        y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
        mask = step_mask(out_lens, Tp)
        y = y * mask[:, :, None]
        self._cache = (arg, mask, B, C, Tp, x.shape[1])
        return _pad_to(y, T_nominal), out_lens

    def backward(self, dy):
        arg, mask, B, C, Tp, T_in = self._cache
        K, s = self.kernel, self.stride
        dy = dy[:, :Tp] * mask[:, :, None]
        dx = np.zeros((B, T_in, C))
        for k in range(K):
            dx[:, k : k + s * (Tp - 1) + 1 : s] += np.where(arg == k, dy, 0.0)
        return dx


class LSTM(Layer):
    """Single-direction LSTM over the valid steps of each sequence.

    Gate layout in the fused weight matrices is input, forget, candidate,
    output. With ``return_all`` the per-step hidden states are returned
    (padded steps zeroed); otherwise the hidden state at ``valid_len - 1``.
    """

    def __init__(self, in_channels: int, hidden: int, return_all: bool = False,
                 rng=None, name: str = "lstm", forget_bias: float = 1.0):
        if hidden <= 0:
            raise ConfigError(f"{name}: hidden_dim must be positive, got {hidden}")
        if in_channels <= 0:
            raise ConfigError(f"{name}: input channels must be positive")
        self.hidden = hidden
        self.return_all = return_all
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        H = hidden
        lim_x = np.sqrt(6.0 / (in_channels + H))
        lim_h = np.sqrt(6.0 / (2 * H))
        self.w_x = Parameter(rng.uniform(-lim_x, lim_x, size=(in_channels, 4 * H)))
        self.w_h = Parameter(rng.uniform(-lim_h, lim_h, size=(H, 4 * H)))
        b = np.zeros(4 * H)
        b[H : 2 * H] = forget_bias
        self.bias = Parameter(b)
        self._cache = None

    def parameters(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}

    def forward(self, x, lens):
        lens = np.asarray(lens)
        if np.any(lens < 1):
            raise PreconditionError(f"{self.name}: valid_len must be >= 1")
        T_nominal = x.shape[1]
        xt = _trim(x, lens)
        B, T, C = xt.shape
        H = self.hidden
        xw = (xt.reshape(B * T, C) @ self.w_x.value + self.bias.value).reshape(B, T, 4 * H)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        mask = step_mask(lens, T)
        steps = []
        hs = np.zeros((B, T, H)) if self.return_all else None
        for t in range(T):
            z = xw[:, t] + h @ self.w_h.value
            gates, c_new, tc, h_new = kernels.lstm_cell_forward(z, c)
            active = mask[:, t : t + 1]
            steps.append((h, c, gates, tc, active))
            h = np.where(active, h_new, h)
            c = np.where(active, c_new, c)
            if hs is not None:
                hs[:, t] = h * active
        self._cache = (xt, steps, B, T, C, T_nominal, mask)
        if self.return_all:
            return _pad_to(hs, T_nominal), lens
        return h

    def backward(self, dy):
        xt, steps, B, T, C, T_nominal, mask = self._cache
        H = self.hidden
        if self.return_all:
            dhs = dy[:, :T] * mask[:, :, None]
            dh_next = np.zeros((B, H))
        else:
            dhs = None
            dh_next = np.array(dy, dtype=np.float64)
        dc_next = np.zeros((B, H))
        dxw = np.zeros((B, T, 4 * H))
        dw_h = np.zeros_like(self.w_h.value)
        w_h_t = self.w_h.value.T
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, gates, tc, active = steps[t]
            dh = dh_next if dhs is None else dh_next + dhs[:, t]
            dz, dc_prev = kernels.lstm_cell_backward(dh, dc_next, gates, c_prev, tc)
            dz *= active
            dxw[:, t] = dz
            dw_h += h_prev.T @ dz
            # inactive steps pass state gradients straight through
            dh_next = np.where(active, dz @ w_h_t, dh)
            dc_next = np.where(active, dc_prev, dc_next)
        dxw2 = dxw.reshape(B * T, 4 * H)
        self.w_h.grad += dw_h
        self.w_x.grad += xt.reshape(B * T, C).T @ dxw2
        self.bias.grad += dxw2.sum(axis=0)
        dx = (dxw2 @ self.w_x.value.T).reshape(B, T, C)
        return _pad_to(dx, T_nominal)


def reverse_valid(x, lens):
    """Reverse each sequence within its valid region; padding stays in place."""
    B, T = x.shape[:2]
    idx = np.arange(T)[None, :]
    lens = np.asarray(lens)[:, None]
    src = np.where(idx < lens, lens - 1 - idx, idx)
    return np.take_along_axis(x, src[:, :, None], axis=1)


class BiLSTM(Layer):
    """Forward and reversed LSTMs over the valid steps, outputs concatenated per step."""

    def __init__(self, in_channels: int, hidden_per_dir: int, rng=None, name: str = "bilstm"):
        self.name = name
        self.fwd = LSTM(in_channels, hidden_per_dir, return_all=True, rng=rng, name=f"{name}.fwd")
        self.bwd = LSTM(in_channels, hidden_per_dir, return_all=True, rng=rng, name=f"{name}.bwd")
        self.hidden = hidden_per_dir

    def parameters(self):
        out = {}
        for d, layer in (("fwd", self.fwd), ("bwd", self.bwd)):
            for k, p in layer.parameters().items():
                out[f"{d}.{k}"] = p
        return out

    def forward(self, x, lens):
        self._lens = np.asarray(lens)
        yf, _ = self.fwd.forward(x, lens)
        yb, _ = self.bwd.forward(reverse_valid(x, lens), lens)
        return np.concatenate([yf, reverse_valid(yb, lens)], axis=2), lens

    def backward(self, dy):
        H = self.hidden
        dxf = self.fwd.backward(dy[:, :, :H])
        dxb = self.bwd.backward(reverse_valid(dy[:, :, H:], self._lens))
        return dxf + reverse_valid(dxb, self._lens)


class Dense(Layer):
    """Affine map on vectors; weights have shape ``(D, O)``."""

    def __init__(self, in_dim: int, out_dim: int, rng=None, name: str = "dense"):
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigError(f"{name}: dimensions must be positive")
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weight.value.shape[0]:
            raise ConfigError(
                f"{self.name}: input dim {x.shape[-1]} != weight rows {self.weight.value.shape[0]}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.weight.grad += x2.T @ dy2
        self.bias.grad += dy2.sum(axis=0)
        return dy @ self.weight.value.T


# --------------------------------------------------------------------------
# single-sequence functional wrappers


def conv1d(seq: MaskedSequence, weights: Parameter, bias: Parameter, stride: int,
           name: str = "conv1d") -> MaskedSequence:
    K, C, F = weights.value.shape
    layer = Conv1D(K, C, F, stride, name=name)
    layer.weight, layer.bias = weights, bias
    x, lens = seq.batch()
    y, out = layer.forward(x, lens)
    return MaskedSequence(y[0], int(out[0]))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def maxpool1d(seq: MaskedSequence, kernel: int, stride: int) -> MaskedSequence:
    layer = MaxPool1D(kernel, stride)
    x, lens = seq.batch()
    y, out = layer.forward(x, lens)
    return MaskedSequence(y[0], int(out[0]))


def dense(x, weights: Parameter, bias: Parameter):
    layer = Dense(*weights.value.shape)
    layer.weight, layer.bias = weights, bias
    return layer.forward(x)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, true_class):
    """Loss ``-log p[true_class]`` and the softmax probabilities.

    Works on a single logit vector or a ``(B, O)`` batch (``true_class`` then
    an integer array; the returned loss is per example). The gradient with
    respect to the logits is ``probs - onehot``; see :func:`softmax_xent_grad`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    O = logits.shape[-1]
    cls = np.asarray(true_class)
    if np.any(cls < 0) or np.any(cls >= O):
        raise PreconditionError(f"class index {true_class} out of range [0, {O})")
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    if logits.ndim == 1:
        return float(-logp[int(cls)]), probs
    return -logp[np.arange(len(cls)), cls], probs


def softmax_xent_grad(probs, true_class):
    g = np.array(probs, dtype=np.float64)
    if g.ndim == 1:
        g[int(true_class)] -= 1.0
    else:
        g[np.arange(g.shape[0]), np.asarray(true_class)] -= 1.0
    return g


# --------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    """Adam with bias correction; clears gradients after each step."""

    params: list
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)


def adam_step(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    if t < 1:
        raise PreconditionError("adam step counter must be >= 1")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        p.value -= lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.zero_grad()


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"{name}\t{self.checked[name]}\t{err:.3e}"
                 for name, err in self.max_rel_error.items()]
        return "\n".join(lines)


def relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(loss_fn, params: dict, tolerance: float = 1e-5, h: float = 1e-5,
               max_elements: int = 64, rng=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(backward)`` must return the scalar loss and, when ``backward`` is
    true, accumulate gradients into each parameter's ``grad``. Parameters
    larger than ``max_elements`` are checked on a random subsample.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    loss_fn(True)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    report = GradCheckReport(tolerance)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_elements else rng.choice(n, max_elements, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn(False)
            flat[i] = orig - h
            fm = loss_fn(False)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = relative_error(analytic[name].reshape(-1)[i], num)
            worst = max(worst, err)
            if err > tolerance:
                report.failures.append((name, int(i), float(analytic[name].reshape(-1)[i]), num, err))
        report.max_rel_error[name] = worst
        report.checked[name] = len(idx)
        p.zero_grad()
    return report
