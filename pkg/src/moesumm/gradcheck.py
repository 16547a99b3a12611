"""Finite-difference verification oracle for analytic gradients.

Compares the tape's gradients against central differences
(f(x + h e_i) - f(x - h e_i)) / 2h, coordinate by coordinate. Relative
error uses max(|analytic|, |numeric|, floor) as denominator so that
near-zero gradients do not blow up the ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._threads import single_thread_blas
from .tensor import Tape, backward, no_grad, zero_grads


@dataclass
class CoordResult:
    tensor: str
    index: int
    analytic: float
    numeric: float
    rel_err: float
    finite: bool = True


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tol: float
    coords: list = field(default_factory=list)
    worst: CoordResult | None = None

    def failures(self):
        return [c for c in self.coords if not c.finite or c.rel_err >= self.tol]


def _rel_err(a, n, floor=1e-8):
    return abs(a - n) / max(abs(a), abs(n), floor)


def finite_diff_check(f, params, h=1e-5, tol=1e-4, max_coords_per_tensor=None,
                      seed=0, extended_precision=True):
    """Check d(f)/d(p) for every tensor in params against central differences.

    f is a zero-argument callable returning a scalar Tensor built from the
    params (re-evaluated at perturbed values for the numeric side). params
    is a sequence of (name, Tensor) pairs or Tensors. When
    max_coords_per_tensor is given, that many coordinates per tensor are
    sampled (seeded); every tensor is still covered. A non-finite f at a
    probe point is reported as a failing coordinate, not raised.

    The probe evaluations run at extended precision (x86 80-bit) when
    available: float64 cancellation in f(x+h) - f(x-h) would otherwise
    drown coordinates whose true gradient is below ~1e-6.
    """
    if h <= 0 or tol <= 0:
        raise ValueError("finite_diff_check: h and tol must be positive")
    named = [p if isinstance(p, tuple) else (f"param{i}", p) for i, p in enumerate(params)]
    tensors = [t for _, t in named]

    zero_grads(tensors)
    with Tape() as tape:
        out = f()
        backward(out, tape)
    analytic = {name: (np.zeros_like(t.data.ravel()) if t.grad is None else t.grad.ravel().copy())
                for name, t in named}

    probe_dtype = np.longdouble if extended_precision else np.float64
    originals = [t.data for t in tensors]
    for t in tensors:
        t.data = t.data.astype(probe_dtype)
    h_p = probe_dtype(h)

    rng = np.random.default_rng(seed)
    coords = []
    max_err = 0.0
    worst = None
    try:
        with single_thread_blas():
            _probe_all(f, named, h_p, analytic, rng, max_coords_per_tensor, coords)
    finally:
        for t, orig in zip(tensors, originals):
            t.data = orig  # bitwise restore
    for c in coords:
        if c.rel_err > max_err or worst is None:
            max_err = c.rel_err
            worst = c

    return GradCheckReport(passed=max_err < tol, max_rel_err=max_err, tol=tol,
                           coords=coords, worst=worst)


def _probe_all(f, named, h_p, analytic, rng, max_coords_per_tensor, coords):
    for name, t in named:
        flat = t.data.ravel()
        n = flat.size
        if max_coords_per_tensor is None or n <= max_coords_per_tensor:
            indices = range(n)
        else:
            indices = np.sort(rng.choice(n, size=max_coords_per_tensor, replace=False))
        for i in indices:
            i = int(i)
            orig = flat[i]
            with no_grad(), np.errstate(invalid="ignore", divide="ignore",
                                        over="ignore"):
                flat[i] = orig + h_p
                fp = f().data.reshape(())
                flat[i] = orig - h_p
                fm = f().data.reshape(())
                flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                c = CoordResult(name, i, float(analytic[name][i]), float("nan"),
                                float("inf"), finite=False)
            else:
                num = float((fp - fm) / (2.0 * h_p))
                err = _rel_err(float(analytic[name][i]), num)
                c = CoordResult(name, i, float(analytic[name][i]), num, err)
            coords.append(c)
