"""Differentiable primitives over :class:`Tensor`.

Each function computes its forward value with numpy and records the
analytic vector-Jacobian product for the tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ContractError, DimensionError, Tensor, as_tensor

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- binary arithmetic ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(ad * bd, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), back, "div")


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor._from_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        da = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        db = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return da, db

    return Tensor._from_op(ad @ bd, (a, b), back, "matmul")


def contract_cheby(basis: Tensor, coeffs: Tensor) -> Tensor:
    """``y[n, o] = sum_i sum_j basis[n, i, j] * coeffs[i, o, j]``.

    Also serves the B-spline layer, whose basis tensor has the same layout.
    """
    if basis.ndim != 3 or coeffs.ndim != 3:
        raise DimensionError(f"contract_cheby expects 3-D operands, got {basis.shape} and {coeffs.shape}")
    n, h, j = basis.shape
    h2, o, j2 = coeffs.shape
    if h != h2 or j != j2:
        raise DimensionError(
            f"contract_cheby: contracted extents differ for {basis.shape} and {coeffs.shape}"
        )
    t2 = basis.data.reshape(n, h * j)
    c2 = coeffs.data.transpose(0, 2, 1).reshape(h * j, o)

    def back(g):
        dt = (g @ c2.T).reshape(n, h, j) if basis.requires_grad else None
        dc = (t2.T @ g).reshape(h, j, o).transpose(0, 2, 1) if coeffs.requires_grad else None
        return dt, dc

    return Tensor._from_op(t2 @ c2, (basis, coeffs), back, "contract_cheby")


# -- shape manipulation -----------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    src = x.shape

    def back(g):
        full = np.zeros(src, dtype=g.dtype)
        if _has_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._from_op(x.data[index], (x,), back, "getitem")


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None

    def back(g):
        sl = [slice(None)] * g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            res.append(g[tuple(sl)])
        return res

    return Tensor._from_op(out, tensors, back, "concat")


def pad_last(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    n = x.shape[-1]
    return Tensor._from_op(
        np.pad(x.data, widths), (x,), lambda g: (g[..., left : left + n],), "pad"
    )


def broadcast_to(x: Tensor, shape) -> Tensor:
    src = x.shape
    return Tensor._from_op(
        np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, src),), "broadcast"
    )


# -- reductions -------------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(out, (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- elementwise nonlinearities ---------------------------------------------


def _unary(x: Tensor, out: np.ndarray, deriv, op: str) -> Tensor:
    return Tensor._from_op(out, (x,), lambda g: (g * deriv(),), op)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _unary(x, y, lambda: 1.0 - y * y, "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _unary(x, y, lambda: y * (1.0 - y), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    v = x.data
    return _unary(x, v * s, lambda: s * (1.0 + v * (1.0 - s)), "silu")


swish = silu


def selu(x: Tensor) -> Tensor:
    v = x.data
    neg = SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
    y = SELU_SCALE * np.where(v > 0, v, neg)
    return _unary(
        x, y, lambda: SELU_SCALE * np.where(v > 0, 1.0, neg + SELU_ALPHA), "selu"
    )


def relu(x: Tensor) -> Tensor:
    v = x.data
    return _unary(x, np.maximum(v, 0.0), lambda: (v > 0).astype(v.dtype), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _unary(x, y, lambda: y, "exp")


def log(x: Tensor) -> Tensor:
    v = x.data
    return _unary(x, np.log(v), lambda: 1.0 / v, "log")


_UNARY = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "silu": silu,
    "swish": swish,
    "selu": selu,
    "relu": relu,
}
_BINARY = {"add": add, "mul": mul}


def elementwise(x, f: str, other=None):
    """Dispatch a named elementwise function.

    ``scale`` takes a float ``other``; ``add``/``mul`` take a tensor.
    """
    if f in _UNARY:
        return _UNARY[f](as_tensor(x))
    if f in _BINARY:
        return _BINARY[f](x, other)
    if f == "scale":
        return scale(as_tensor(x), float(other))
    raise ContractError(f"unknown elementwise function {f!r}")


# -- normalisation & attention helpers --------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data
    if not -v.ndim <= axis < v.ndim:
        raise ContractError(f"softmax axis {axis} out of range for rank {v.ndim}")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), back, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise over the last axis, then apply ``gamma``/``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last axis {d}"
        )
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(v.ndim - 1))

    def back(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


class DegenerateBatchError(ValueError):
    """Train-mode batch norm saw fewer than two values per channel."""


class BatchNormState:
    """Running per-channel statistics for :func:`batch_norm`."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
) -> Tensor:
    """Per-channel normalisation of a ``B x C x T`` tensor over (B, T)."""
    if x.ndim != 3:
        raise DimensionError(f"batch_norm expects B x C x T, got {x.shape}")
    b, c, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine shape does not match {c} channels")
    v = x.data
    gd = gamma.data[None, :, None]
    axes = (0, 2)
    if mode == "train":
        m = b * t
        if m < 2:
            raise DegenerateBatchError("batch_norm in train mode needs at least 2 values per channel")
        mu = v.mean(axis=axes, keepdims=True)
        xc = v - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv
        mom = state.momentum
        state.running_mean = (1 - mom) * state.running_mean + mom * mu.reshape(c)
        state.running_var = (1 - mom) * state.running_var + mom * var.reshape(c) * m / (m - 1)

        def back(g):
            dxhat = g * gd
            dx = inv * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var[None, :, None] + state.eps)
        xhat = (v - state.running_mean[None, :, None]) * inv

        def back(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ContractError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    return Tensor._from_op(xhat * gd + beta.data[None, :, None], (x, gamma, beta), back, "batch_norm")


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """First half of ``axis`` gated by the sigmoid of the second half."""
    n = x.shape[axis]
    if n % 2:
        raise DimensionError(f"glu needs an even extent on axis {axis}, got {n}")
    h = n // 2
    sl_a = [slice(None)] * x.ndim
    sl_b = [slice(None)] * x.ndim
    sl_a[axis] = slice(0, h)
    sl_b[axis] = slice(h, n)
    return mul(getitem(x, tuple(sl_a)), sigmoid(getitem(x, tuple(sl_b))))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: Bernoulli keep-mask scaled by ``1 / (1 - p)``."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))


# -- convolution --------------------------------------------------------------


class ConfigurationError(ValueError):
    """Layer or operation configured inconsistently."""


def same_padding(k: int) -> tuple[int, int]:
    total = k - 1
    left = total // 2
    return left, total - left


def conv1d(
    x: Tensor,
    kernel: Tensor,
    groups: int = 1,
    padding: str | int = "same",
) -> Tensor:
    """Cross-correlation of ``x`` (``B x C x T`` or ``C x T``) with
    ``kernel`` of shape ``C_out x C/groups x k``."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    b, c, t = x.shape
    c_out, cg, k = kernel.shape
    if c % groups or c_out % groups:
        raise ConfigurationError(f"channels {c} -> {c_out} not divisible by groups={groups}")
    if cg != c // groups:
        raise ConfigurationError(
            f"kernel expects {cg} input channels per group, input gives {c // groups}"
        )
    if padding == "same":
        left, right = same_padding(k)
    elif padding == "valid":
        left = right = 0
    else:
        left = right = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    tp = xp.shape[-1]
    t_out = tp - k + 1
    if t_out < 1:
        raise DimensionError(f"conv1d: kernel {k} longer than padded input {tp}")
    og = c_out // groups
    xg = xp.reshape(b, groups, cg, tp)
    w = kernel.data.reshape(groups, og, cg, k)
    out = np.zeros((b, groups, og, t_out), dtype=xp.dtype)
    for a in range(k):
        out += w[..., a] @ xg[..., a : a + t_out]

    def back(g):
        gg = g.reshape(b, groups, og, t_out)
        dx = dw = None
        if x.requires_grad:
            dxg = np.zeros_like(xg)
            for a in range(k):
                dxg[..., a : a + t_out] += np.swapaxes(w[..., a], -1, -2) @ gg
            dx = dxg.reshape(b, c, tp)[..., left : left + t]
        if kernel.requires_grad:
            dw = np.empty_like(w)
            for a in range(k):
                dw[..., a] = (gg @ np.swapaxes(xg[..., a : a + t_out], -1, -2)).sum(axis=0)
            dw = dw.reshape(kernel.shape)
        return dx, dw

    res = Tensor._from_op(out.reshape(b, c_out, t_out), (x, kernel), back, "conv1d")
    return reshape(res, res.shape[1:]) if squeeze else res


def tap_sum(v: Tensor, t_out: int) -> Tensor:
    """``out[b, t, f] = sum_a v[b, t + a, a, f]`` for ``v`` of shape B x Tp x k x F.

    Gathers the per-tap responses of a sliding window whose taps have
    already been evaluated at every padded position.
    """
    b, tp, k, f = v.shape
    if tp - k + 1 != t_out:
        raise DimensionError(f"tap_sum: padded length {tp} and {k} taps cannot give {t_out} outputs")
    d = v.data
    out = np.zeros((b, t_out, f), dtype=d.dtype)
    for a in range(k):
        out += d[:, a : a + t_out, a, :]

    def back(g):
        dv = np.zeros_like(d)
        for a in range(k):
            dv[:, a : a + t_out, a, :] = g
        return (dv,)

    return Tensor._from_op(out, (v,), back, "tap_sum")


# -- loss -----------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray, class_weights=None) -> Tensor:
    """Weighted mean negative log-likelihood of integer ``labels``.

    Normalised by the total weight of the batch, so unit weights give the
    plain mean.
    """
    z = logits.data
    n, k = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    w = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=DTYPE)
    wi = w[labels]
    total = wi.sum()
    zs = z - z.max(axis=1, keepdims=True)
    logz = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - logz
    nll = -logp[np.arange(n), labels]
    loss = float((wi * nll).sum() / total)

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p * (wi / total)[:, None],)

    return Tensor._from_op(np.asarray(loss), (logits,), back, "cross_entropy")
