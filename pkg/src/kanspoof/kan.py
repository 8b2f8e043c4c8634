"""Kolmogorov-Arnold layers.

Three families of learnable univariate-function layers:

* :class:`ChebyKanLayer` - each edge function is a Chebyshev expansion of
  ``tanh(x)``; the layer output is ``y[n, o] = sum_i sum_j T_j(tanh x[n, i]) C[i, o, j]``.
* :class:`BsplineKanLayer` - each edge is ``w_b * silu(x) + w_s * spline(x)``.
* :class:`KanConv` / :class:`KanConv2d` - convolutions whose kernel taps
  are Chebyshev edge functions instead of scalar weights.
"""

from __future__ import annotations

import numpy as np

from .module import Module
from .numerics import ConfigurationError, Parameter, Tensor, ops
from .numerics.tensor import DimensionError


class DomainError(ValueError):
    """Input lies outside the domain of a polynomial basis."""


# -- Chebyshev basis ------------------------------------------------------------


def chebyshev_basis(x: Tensor, degree: int) -> Tensor:
    """Stack ``T_0(x) .. T_degree(x)`` on a new trailing axis.

    Uses the three-term recursion ``T_m = 2 x T_{m-1} - T_{m-2}``; the
    derivative follows the differentiated recursion.  Inputs must lie in
    [-1, 1].
    """
    if degree < 0:
        raise ConfigurationError(f"degree must be nonnegative, got {degree}")
    v = x.data
    if v.size and np.max(np.abs(v)) > 1.0 + 1e-9:
        raise DomainError(f"chebyshev_basis input outside [-1, 1] (max |x| = {np.max(np.abs(v)):.6g})")
    # degree-major planes keep the recursion on contiguous memory
    planes = np.empty((degree + 1,) + v.shape, dtype=v.dtype)
    planes[0] = 1.0
    if degree >= 1:
        planes[1] = v
    for m in range(2, degree + 1):
        np.multiply(v, planes[m - 1], out=planes[m])
        planes[m] *= 2.0
        planes[m] -= planes[m - 2]
    t = np.moveaxis(planes, 0, -1)

    def back(g):
        gm = np.moveaxis(g, -1, 0)
        if degree == 0:
            return (np.zeros_like(v),)
        res = gm[1].copy()
        d_prev2 = np.zeros_like(v)
        d_prev = np.ones_like(v)
        for m in range(2, degree + 1):
            d = 2.0 * (planes[m - 1] + v * d_prev) - d_prev2
            res += gm[m] * d
            d_prev2, d_prev = d_prev, d
        return (res,)

    return Tensor._from_op(t, (x,), back, "chebyshev_basis")


# -- B-spline basis ---------------------------------------------------------------


def make_grid(intervals: int = 5, order: int = 3, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Uniform knots over [lo, hi] extended by ``order`` knots on each side."""
    step = (hi - lo) / intervals
    return lo + step * np.arange(-order, intervals + order + 1, dtype=np.float64)


def bspline_basis(x: Tensor, grid: np.ndarray, order: int) -> Tensor:
    """Cox-de Boor B-spline values, shape ``x.shape + (G + order,)``.

    ``grid`` is the extended knot vector produced by :func:`make_grid`
    (``G + 2 * order + 1`` knots); inputs are clamped to
    ``[grid[order], grid[-order - 1]]`` and carry zero gradient outside it.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ConfigurationError("B-spline grid must be a strictly increasing 1-D knot vector")
    n_intervals = grid.size - 2 * order - 1
    if n_intervals < 1:
        raise ConfigurationError(f"grid of {grid.size} knots too short for order {order}")
    lo, hi = grid[order], grid[-order - 1]
    v = x.data
    xc = np.clip(v, lo, hi)
    inside = (v >= lo) & (v <= hi)

    idx = np.searchsorted(grid, xc, side="right") - 1
    idx = np.clip(idx, order, order + n_intervals - 1)
    xe = xc[..., None]
    basis = (np.arange(grid.size - 1) == idx[..., None]).astype(np.float64)
    prev = basis
    for p in range(1, order + 1):
        prev = basis
        left = (xe - grid[: -(p + 1)]) / (grid[p:-1] - grid[: -(p + 1)])
        right = (grid[p + 1 :] - xe) / (grid[p + 1 :] - grid[1:-p])
        basis = left * prev[..., :-1] + right * prev[..., 1:]

    def back(g):
        if order == 0:
            return (np.zeros_like(v),)
        d = order * (
            prev[..., :-1] / (grid[order:-1] - grid[: -(order + 1)])
            - prev[..., 1:] / (grid[order + 1 :] - grid[1:-order])
        )
        return ((g * d).sum(axis=-1) * inside,)

    return Tensor._from_op(basis, (x,), back, "bspline_basis")


# -- initialisation ------------------------------------------------------------------


def init_kan_parameters(layer: Module, rng: np.random.Generator) -> None:
    """Draw fresh parameters for a KAN layer from ``rng``.

    Chebyshev coefficients are zero-mean normal with variance
    ``1 / (fan_in * (degree + 1))``.  B-spline layers draw spline
    coefficients from N(0, 0.1^2), ``w_b`` uniformly in +-1/sqrt(d_in)
    and start ``w_s`` at one.
    """
    if isinstance(layer, ChebyKanLayer):
        std = np.sqrt(1.0 / (layer.input_dim * (layer.degree + 1)))
        layer.cheby_coeffs.data[...] = rng.normal(0.0, std, layer.cheby_coeffs.shape)
    elif isinstance(layer, BsplineKanLayer):
        layer.spline_coeffs.data[...] = rng.normal(0.0, 0.1, layer.spline_coeffs.shape)
        bound = 1.0 / np.sqrt(layer.input_dim)
        layer.w_b.data[...] = rng.uniform(-bound, bound, layer.w_b.shape)
        layer.w_s.data[...] = 1.0
    elif isinstance(layer, (KanConv, KanConv2d)):
        std = np.sqrt(1.0 / (layer.fan_in * (layer.degree + 1)))
        layer.ka_coeffs.data[...] = rng.normal(0.0, std, layer.ka_coeffs.shape)
    else:
        raise TypeError(f"not a KAN layer: {type(layer).__name__}")


# -- layers ------------------------------------------------------------------------------


class ChebyKanLayer(Module):
    """Chebyshev KAN layer mapping ``... x H`` to ``... x O``."""

    def __init__(self, input_dim: int, output_dim: int, degree: int = 4, rng: np.random.Generator | None = None):
        if not 0 <= degree <= 8:
            raise ConfigurationError(f"Chebyshev degree must be in 0..8, got {degree}")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.degree = degree
        self.cheby_coeffs = Parameter(np.zeros((input_dim, output_dim, degree + 1)))
        if rng is not None:
            init_kan_parameters(self, rng)

    def forward(self, x: Tensor) -> Tensor:
        return cheby_forward(self, x)


def cheby_forward(layer: ChebyKanLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.input_dim:
        raise DimensionError(f"ChebyKAN expects last axis {layer.input_dim}, got {x.shape}")
    lead = x.shape[:-1]
    flat = ops.reshape(x, (-1, layer.input_dim))
    basis = chebyshev_basis(ops.tanh(flat), layer.degree)
    y = ops.contract_cheby(basis, layer.cheby_coeffs)
    return ops.reshape(y, lead + (layer.output_dim,))


class BsplineKanLayer(Module):
    """B-spline KAN layer: ``out_o = sum_i w_b silu(x_i) + w_s sum_g c_g B_g(x_i)``."""

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        grid_intervals: int = 5,
        order: int = 3,
        rng: np.random.Generator | None = None,
        grid: np.ndarray | None = None,
    ):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.order = order
        self.grid = make_grid(grid_intervals, order) if grid is None else np.asarray(grid, dtype=np.float64)
        if np.any(np.diff(self.grid) <= 0):
            raise ConfigurationError("B-spline grid must be strictly increasing")
        n_basis = self.grid.size - order - 1
        self.spline_coeffs = Parameter(np.zeros((input_dim, output_dim, n_basis)))
        self.w_b = Parameter(np.zeros((input_dim, output_dim)))
        self.w_s = Parameter(np.zeros((input_dim, output_dim)))
        if rng is not None:
            init_kan_parameters(self, rng)

    def forward(self, x: Tensor) -> Tensor:
        return bspline_kan_forward(self, x)


def bspline_kan_forward(layer: BsplineKanLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.input_dim:
        raise DimensionError(f"B-spline KAN expects last axis {layer.input_dim}, got {x.shape}")
    lead = x.shape[:-1]
    flat = ops.reshape(x, (-1, layer.input_dim))
    base = ops.matmul(ops.silu(flat), layer.w_b)
    basis = bspline_basis(flat, layer.grid, layer.order)
    coeffs = layer.spline_coeffs * ops.reshape(layer.w_s, layer.w_s.shape + (1,))
    y = base + ops.contract_cheby(basis, coeffs)
    return ops.reshape(y, lead + (layer.output_dim,))


class KanConv(Module):
    """1-D Kolmogorov-Arnold convolution over ``B x C x T`` inputs.

    Every kernel tap applies its own Chebyshev function of the input value
    and the results are summed.  Modes:

    ``full``       ``out[o, t] = sum_d sum_a phi[a, d, o](y[d, t + a])``
    ``pointwise``  ``full`` with a single tap (channel mixing only)
    ``depthwise``  ``out[d, t] = sum_a phi[a, d](y[d, t + a])``, no channel sum

    Coefficients are stored as ``k x C x O x J`` (full, pointwise) or
    ``k x C x J`` (depthwise) with ``J = degree + 1``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int | None = None,
        kernel_size: int = 1,
        mode: str = "full",
        degree: int = 4,
        padding: str = "same",
        rng: np.random.Generator | None = None,
    ):
        if mode not in ("full", "pointwise", "depthwise"):
            raise ConfigurationError(f"unknown KanConv mode {mode!r}")
        if mode == "pointwise" and kernel_size != 1:
            raise ConfigurationError("pointwise KanConv has kernel_size 1")
        if mode == "depthwise":
            if out_channels not in (None, in_channels):
                raise ConfigurationError("depthwise KanConv keeps the channel count")
            out_channels = in_channels
        if out_channels is None:
            raise ConfigurationError("out_channels is required for full/pointwise KanConv")
        if padding not in ("same", "valid"):
            raise ConfigurationError(f"padding must be 'same' or 'valid', got {padding!r}")
        if not 0 <= degree <= 8:
            raise ConfigurationError(f"Chebyshev degree must be in 0..8, got {degree}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.mode = mode
        self.degree = degree
        self.padding = padding
        j = degree + 1
        if mode == "depthwise":
            shape = (kernel_size, in_channels, j)
            self.fan_in = kernel_size
        else:
            shape = (kernel_size, in_channels, out_channels, j)
            self.fan_in = kernel_size * in_channels
        self.ka_coeffs = Parameter(np.zeros(shape))
        if rng is not None:
            init_kan_parameters(self, rng)

    def forward(self, y: Tensor) -> Tensor:
        return kan_conv_forward(self, y)


def kan_conv_forward(conv: KanConv, y: Tensor) -> Tensor:
    if y.ndim != 3 or y.shape[1] != conv.in_channels:
        raise ConfigurationError(f"KanConv expects B x {conv.in_channels} x T input, got {y.shape}")
    b, c, t = y.shape
    k = conv.kernel_size
    j = conv.degree + 1
    if conv.padding == "same":
        left, right = ops.same_padding(k)
        t_out = t
    else:
        left = right = 0
        t_out = t - k + 1
        if t_out < 1:
            raise DimensionError(f"valid KanConv with kernel {k} needs T >= {k}, got {t}")
    yp = ops.pad_last(y, left, right) if left or right else y
    tp = yp.shape[-1]
    basis = chebyshev_basis(ops.tanh(yp), conv.degree)  # B x C x Tp x J

    if conv.mode == "depthwise":
        bt = ops.reshape(ops.transpose(basis, (1, 0, 2, 3)), (c, b * tp, j))
        cm = ops.transpose(conv.ka_coeffs, (1, 2, 0))  # C x J x k
        v = ops.reshape(ops.matmul(bt, cm), (c, b, tp, k))
        v = ops.transpose(v, (1, 2, 3, 0))
    else:
        o = conv.out_channels
        bt = ops.reshape(ops.transpose(basis, (0, 2, 1, 3)), (b * tp, c * j))
        cm = ops.reshape(ops.transpose(conv.ka_coeffs, (1, 3, 0, 2)), (c * j, k * o))
        v = ops.reshape(ops.matmul(bt, cm), (b, tp, k, o))
    out = ops.tap_sum(v, t_out) if k > 1 else ops.reshape(v, (b, tp, v.shape[-1]))
    return ops.transpose(out, (0, 2, 1))


class KanConv2d(Module):
    """2-D full Kolmogorov-Arnold convolution with valid padding.

    ``out[o, i, j] = sum_d sum_a sum_b phi[a, b, d, o](y[d, i + a, j + b])``
    for ``B x C x n x m`` inputs; coefficients are ``k x k x C x O x J``.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int = 1,
        kernel_size: int = 3,
        degree: int = 4,
        rng: np.random.Generator | None = None,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.degree = degree
        self.fan_in = kernel_size * kernel_size * in_channels
        self.ka_coeffs = Parameter(
            np.zeros((kernel_size, kernel_size, in_channels, out_channels, degree + 1))
        )
        if rng is not None:
            init_kan_parameters(self, rng)

    def forward(self, y: Tensor) -> Tensor:
        if y.ndim != 4 or y.shape[1] != self.in_channels:
            raise ConfigurationError(f"KanConv2d expects B x {self.in_channels} x n x m, got {y.shape}")
        b, c, n, m = y.shape
        k, o, j = self.kernel_size, self.out_channels, self.degree + 1
        ni, mj = n - k + 1, m - k + 1
        if ni < 1 or mj < 1:
            raise DimensionError(f"input {n}x{m} smaller than kernel {k}")
        basis = chebyshev_basis(ops.tanh(y), self.degree)  # B x C x n x m x J
        bt = ops.reshape(ops.transpose(basis, (0, 2, 3, 1, 4)), (b * n * m, c * j))
        cm = ops.reshape(ops.transpose(self.ka_coeffs, (2, 4, 0, 1, 3)), (c * j, k * k * o))
        v = ops.reshape(ops.matmul(bt, cm), (b, n, m, k, k, o))
        out = None
        for a in range(k):
            for bb in range(k):
                term = v[:, a : a + ni, bb : bb + mj, a, bb, :]
                out = term if out is None else out + term
        return ops.transpose(out, (0, 3, 1, 2))
