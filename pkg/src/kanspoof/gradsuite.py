"""Finite-difference gradient checks over every trainable unit.

Each unit is a small instance whose scalar objective is ``sum(W * out)``
for a fixed random ``W``.  Gradients are checked with respect to the
input and every parameter.  Batch norm runs in eval mode on randomised
running statistics so the objective is a deterministic function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kan import BsplineKanLayer, ChebyKanLayer, KanConv, KanConv2d
from .kanformer import (
    ConvolutionModule,
    FeedForwardModule,
    KanformerBlock,
    ModelConfig,
    MultiHeadSelfAttention,
    build_model,
)
from .module import Module
from .numerics import Tensor, finite_diff_check, ops

TOLERANCE = 1e-5

# the full-model unit: D=6, D'=8, two heads, one block, T=4, degree 2
GRADCHECK_MODEL = ModelConfig(
    feature_dim=6, model_dim=8, heads=2, blocks=1, ff_expansion=2, cheby_degree=2, depthwise_kernel=3
)


@dataclass
class UnitResult:
    unit: str
    max_rel_error: float
    n_checked: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= TOLERANCE)

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "max_rel_error": self.max_rel_error,
            "n_checked": self.n_checked,
            "seconds": self.seconds,
            "passed": self.passed,
        }


def _randomise_bn(module: Module, rng: np.random.Generator) -> None:
    for m in module.modules():
        stats = getattr(m, "stats", None)
        if stats is not None:
            stats.running_mean[...] = rng.normal(0.0, 0.1, stats.running_mean.shape)
            stats.running_var[...] = rng.uniform(0.5, 1.5, stats.running_var.shape)


def _corrupt(y: Tensor) -> Tensor:
    """Identity forward, doubled backward: a deliberately wrong gradient."""
    return Tensor._from_op(y.data.copy(), (y,), lambda g: (2.0 * g,), "corrupt")


def _units(rng: np.random.Generator) -> list[tuple[str, Module, np.ndarray]]:
    full = build_model(GRADCHECK_MODEL, seed=int(rng.integers(2**31)))
    return [
        ("cheby_kan", ChebyKanLayer(4, 3, 4, rng), rng.normal(size=(5, 4))),
        ("bspline_kan", BsplineKanLayer(4, 3, rng=rng), rng.uniform(-0.95, 0.95, (5, 4))),
        ("kaconv_pointwise", KanConv(3, 4, 1, "pointwise", 3, rng=rng), rng.normal(size=(2, 3, 5))),
        ("kaconv_depthwise", KanConv(3, None, 3, "depthwise", 3, rng=rng), rng.normal(size=(2, 3, 5))),
        ("kaconv_full", KanConv(3, 2, 3, "full", 3, rng=rng), rng.normal(size=(2, 3, 5))),
        ("kaconv2d_full", KanConv2d(2, 2, 3, 2, rng=rng), rng.normal(size=(1, 2, 4, 4))),
        ("ff_mlp", FeedForwardModule(8, 2, "mlp", 2, rng), rng.normal(size=(2, 4, 8))),
        ("ff_kan", FeedForwardModule(8, 2, "kan", 2, rng), rng.normal(size=(2, 4, 8))),
        ("conv_standard", ConvolutionModule(8, 3, "standard", 2, rng), rng.normal(size=(2, 4, 8))),
        ("conv_kan", ConvolutionModule(8, 3, "kan", 2, rng), rng.normal(size=(2, 4, 8))),
        ("mhsa", MultiHeadSelfAttention(8, 2, rng), rng.normal(size=(2, 4, 8))),
        ("block", KanformerBlock(GRADCHECK_MODEL, rng), rng.normal(size=(2, 4, 8))),
        ("full_model", full, rng.normal(size=(2, 4, 6))),
    ]


UNIT_NAMES = (
    "cheby_kan",
    "bspline_kan",
    "kaconv_pointwise",
    "kaconv_depthwise",
    "kaconv_full",
    "kaconv2d_full",
    "ff_mlp",
    "ff_kan",
    "conv_standard",
    "conv_kan",
    "mhsa",
    "block",
    "full_model",
)


def check_unit(name: str, module: Module, x: np.ndarray, rng, corrupt: bool = False) -> UnitResult:
    module.eval()
    _randomise_bn(module, rng)
    with_probe = Tensor(x)
    out_shape = module(with_probe).shape
    w = Tensor(rng.normal(size=out_shape))

    def objective(inp: Tensor) -> Tensor:
        y = module(inp)
        if corrupt:
            y = _corrupt(y)
        return ops.sum(y * w)

    params = module.parameters()
    start = time.perf_counter()
    err = finite_diff_check(objective, with_probe, params=params)
    n = x.size + sum(p.size for p in params)
    return UnitResult(name, float(err), int(n), time.perf_counter() - start)


def run_gradcheck(seed: int = 0, corrupt: str | None = None, log: Callable[[str], None] | None = None) -> list[UnitResult]:
    """Check every unit; ``corrupt`` names a unit whose gradient is sabotaged."""
    if corrupt is not None and corrupt not in UNIT_NAMES:
        raise ValueError(f"unknown gradcheck unit {corrupt!r}")
    rng = np.random.default_rng(seed)
    results = []
    for name, module, x in _units(rng):
        res = check_unit(name, module, x, rng, corrupt=(name == corrupt))
        if log:
            log(format_row(res))
        results.append(res)
    return results


def format_row(r: UnitResult) -> str:
    return f"{r.unit:<18} {r.max_rel_error:10.3e} {r.n_checked:7d} {r.seconds:7.2f}s  {'PASS' if r.passed else 'FAIL'}"
