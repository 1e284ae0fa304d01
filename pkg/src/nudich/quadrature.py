"""Globally adaptive Gauss-Legendre quadrature with embedded error estimates.

Each panel is integrated with an n-point and a 2n-point Gauss rule; the
difference of the two, plus a rounding floor, is the (conservative) error
estimate of the 2n-point value. The panel with the largest estimate is bisected until the total
estimate meets ``max(abs_tol, rel_tol * |I|)``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureFailure

_ORDER = 8
_LO_X, _LO_W = np.polynomial.legendre.leggauss(_ORDER)
_HI_X, _HI_W = np.polynomial.legendre.leggauss(2 * _ORDER)
_ROUNDING = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    panels: int

    def __add__(self, other: "QuadResult") -> "QuadResult":
        return QuadResult(self.value + other.value, self.error + other.error,
                          self.panels + other.panels)


def _panel_rules(f, a, b):
    """Low/high order estimates for a batch of panels [a_k, b_k]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x_lo = mid[:, None] + half[:, None] * _LO_X[None, :]
    x_hi = mid[:, None] + half[:, None] * _HI_X[None, :]
    nodes = np.concatenate([x_lo.ravel(), x_hi.ravel()])
    vals = np.asarray(f(nodes), dtype=float)
    k = len(a)
    f_lo = vals[: k * _ORDER].reshape(k, _ORDER)
    f_hi = vals[k * _ORDER:].reshape(k, 2 * _ORDER)
    lo = half * (f_lo @ _LO_W)
    hi = half * (f_hi @ _HI_W)
    # floor the estimate at the rounding level of the 2n-point sum
    rounding = _ROUNDING * half * (np.abs(f_hi) @ _HI_W)
    with np.errstate(invalid="ignore"):
        return hi, np.abs(hi - lo) + rounding


def integrate(f, a: float, b: float, abs_tol: float = 1e-12, rel_tol: float = 1e-10,
              panels: int = 8, max_panels: int = 4000) -> QuadResult:
    """Integrate a vectorised function ``f`` over [a, b].

    ``panels`` sets the initial uniform step (b - a) / panels.
    """
    if b < a:
        raise ValueError("integration bounds must satisfy a <= b")
    if b == a:
        return QuadResult(0.0, 0.0, 0)
    edges = np.linspace(a, b, panels + 1)
    vals, errs = _panel_rules(f, edges[:-1], edges[1:])
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(errs))):
        raise QuadratureFailure("non-finite integrand values")
    heap = [(-e, lo, hi, v) for e, lo, hi, v in zip(errs, edges[:-1], edges[1:], vals)]
    heapq.heapify(heap)
    total = float(np.sum(vals))
    err = float(np.sum(errs))
    count = panels
    while err > max(abs_tol, rel_tol * abs(total)):
        if count >= max_panels:
            raise QuadratureFailure(
                f"tolerance not met with {count} panels (error estimate {err:.3e})"
            )
        # split the worst few panels at once
        batch = [heapq.heappop(heap) for _ in range(min(8, len(heap)))]
        lefts, rights = [], []
        for _, lo, hi, _ in batch:
            m = 0.5 * (lo + hi)
            lefts += [lo, m]
            rights += [m, hi]
        new_vals, new_errs = _panel_rules(f, lefts, rights)
        if not (np.all(np.isfinite(new_vals)) and np.all(np.isfinite(new_errs))):
            raise QuadratureFailure("non-finite integrand values")
        for ne, lo, hi, nv in zip(new_errs, lefts, rights, new_vals):
            heapq.heappush(heap, (-ne, lo, hi, nv))
        total += float(np.sum(new_vals)) - sum(item[3] for item in batch)
        err += float(np.sum(new_errs)) + sum(item[0] for item in batch)
        count += len(batch)
        # periodic resummation guards against drift in the running totals
        if count % 256 < len(batch):
            total = float(sum(item[3] for item in heap))
            err = float(sum(-item[0] for item in heap))
    total = float(sum(item[3] for item in heap))
    err = float(sum(-item[0] for item in heap))
    return QuadResult(total, err, len(heap))
