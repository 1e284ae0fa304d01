"""Datko-type integral criterion for nonuniform exponential dichotomy.

For a point (t, x) the functional is

    D_P = int_t^inf  e^{p gamma (tau - t)} ||U_P(tau, t) x||^p dtau
    D_Q = int_0^t    e^{p gamma (t - tau)} ||U_Q(tau, t) x||^p dtau

and the criterion asks for D_P + D_Q <= K e^{p beta t} (||P(t)x||^p + ||Q(t)x||^p).

The improper forward integral is truncated at t + L. What is left beyond the
cut is bounded with a P-side envelope (N, alpha, nu), nu > gamma:

    tail(L) = N^p e^{p alpha t} ||P(t)x||^p e^{-p (nu - gamma) L} / (p (nu - gamma)),

and L is doubled until the tail is below the quadrature tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (
    CompatibilityEstimate,
    GridSpec,
    check_compatibility,
    opnorm,
    uq_many,
)
from .envelope import (
    DichotomyConstants,
    EnvelopeFit,
    Side,
    collect_samples,
    fit_envelope,
)
from .errors import DivergentTail, HypothesisViolated, InvalidParam
from .quadrature import QuadResult, integrate

CERTIFIED = "certified-dichotomy"
HYPOTHESES_FAIL = "bound-holds-but-hypotheses-fail"
BOUND_FAILS = "bound-fails"

GAMMA_MARGIN = 1e-3


@dataclass(frozen=True)
class QuadraturePolicy:
    """Tolerances for the composite Gauss-Legendre rule and the tail cut."""

    abs_tol: float = 1e-13
    rel_tol: float = 1e-10
    panels: int = 8
    max_panels: int = 4000
    tail_T: float = 10.0
    max_tail_T: float = 400.0

    def halved(self) -> "QuadraturePolicy":
        """Same policy with the initial step size halved."""
        return replace(self, panels=2 * self.panels)


@dataclass(frozen=True)
class DatkoConfig:
    p: float
    gamma: float
    beta: float
    K: float | None = None
    quadrature: QuadraturePolicy = field(default_factory=QuadraturePolicy)

    def __post_init__(self):
        if not self.p > 0:
            raise InvalidParam("p must be positive")
        if not self.gamma > 0:
            raise InvalidParam("gamma must be positive")
        if not self.beta >= 0:
            raise InvalidParam("beta must be nonnegative")
        if self.K is not None and not self.K >= 1:
            raise InvalidParam("K must be at least 1")

    @property
    def tail_T(self) -> float:
        return self.quadrature.tail_T


@dataclass(frozen=True)
class DatkoValue:
    D_P: float
    D_Q: float
    tail_bound: float
    error: float
    horizon: float

    @property
    def total(self) -> float:
        return self.D_P + self.D_Q


# ---------------------------------------------------------------------------
# trajectory pieces shared with the Lyapunov construction


def forward_vectors(family, projection, t: float, x, taus) -> np.ndarray:
    """Rows U(tau_k, t) P(t) x for tau_k >= t."""
    px = projection.P(t) @ np.asarray(x, dtype=float)
    return family.evaluate_many(taus, t) @ px


def backward_vectors(family, projection, t: float, x, taus) -> np.ndarray:
    """Rows U_Q(tau_k, t) Q(t) x for tau_k <= t."""
    return uq_many(family, projection, taus, t) @ np.asarray(x, dtype=float)


def envelope_tail(envelope: EnvelopeFit, p: float, rate: float, t: float, px_norm: float):
    """Tail function L -> bound on int_{t+L}^inf e^{p rate (tau-t)} ||U_P(tau,t)x||^p.

    Raises DivergentTail unless the envelope decays faster than ``rate``.
    """
    if envelope is None or not envelope.feasible or not np.isfinite(envelope.N):
        raise DivergentTail("no feasible P-side envelope for the tail bound")
    gap = p * (envelope.nu - rate)
    if not gap > 0:
        raise DivergentTail(
            f"envelope rate nu = {envelope.nu:.4g} does not exceed gamma = {rate:.4g}"
        )
    scale = envelope.N ** p * np.exp(p * envelope.alpha * t) * px_norm ** p / gap

    def tail(L):
        return float(scale * np.exp(-gap * L))

    return tail


def improper_integral(f, t: float, tail: Callable[[float], float],
                      policy: QuadraturePolicy) -> tuple[QuadResult, float, float]:
    """Integrate ``f`` over [t, inf) by truncation.

    Returns (quadrature result on [t, t+L], tail bound at L, L).
    """
    L = policy.tail_T
    res = integrate(f, t, t + L, policy.abs_tol, policy.rel_tol, policy.panels, policy.max_panels)
    tb = tail(L)
    while tb > max(policy.abs_tol, policy.rel_tol * abs(res.value)) and L < policy.max_tail_T:
        L_new = min(2 * L, policy.max_tail_T)
        res = res + integrate(f, t + L, t + L_new, policy.abs_tol, policy.rel_tol,
                              policy.panels, policy.max_panels)
        L = L_new
        tb = tail(L)
    return res, tb, L


def _proper(f, a, b, policy: QuadraturePolicy) -> QuadResult:
    return integrate(f, a, b, policy.abs_tol, policy.rel_tol, policy.panels, policy.max_panels)


def datko_functional(family, projection, t: float, x, config: DatkoConfig,
                     envelope: EnvelopeFit | None = None) -> DatkoValue:
    """Evaluate (D_P, D_Q) at (t, x).

    ``envelope`` is the P-side fit used to bound the truncated tail; it is
    only needed when P(t)x != 0.
    """
    if t < 0:
        raise InvalidParam("t must be nonnegative")
    x = np.asarray(x, dtype=float)
    p, g, pol = config.p, config.gamma, config.quadrature

    px_norm = opnorm(projection.P(t) @ x)
    if px_norm > 0:
        def fp(taus):
            v = np.linalg.norm(forward_vectors(family, projection, t, x, taus), axis=1)
            return np.exp(p * g * (taus - t)) * v ** p

        tail = envelope_tail(envelope, p, g, t, px_norm)
        rp, tb, L = improper_integral(fp, t, tail, pol)
    else:
        rp, tb, L = QuadResult(0.0, 0.0, 0), 0.0, 0.0

    qx_norm = opnorm(projection.Q(t) @ x)
    if qx_norm > 0 and t > 0:
        def fq(taus):
            v = np.linalg.norm(backward_vectors(family, projection, t, x, taus), axis=1)
            return np.exp(p * g * (t - taus)) * v ** p

        rq = _proper(fq, 0.0, t, pol)
    else:
        rq = QuadResult(0.0, 0.0, 0)
    return DatkoValue(rp.value, rq.value, tb, rp.error + rq.error + tb, L)


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class DatkoPoint:
    t: float
    x: tuple
    D_P: float
    D_Q: float
    weight: float
    error: float
    bound_rhs: float

    @property
    def ratio(self) -> float:
        return (self.D_P + self.D_Q) / self.weight


@dataclass(frozen=True)
class DatkoReport:
    config: DatkoConfig
    per_point: list
    K_est: float
    epsilon: float
    hypothesis_ok: dict
    bound_holds: bool
    verdict: str
    max_error: float
    skipped: int = 0

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED


def hypothesis_flags(gamma: float, beta: float, epsilon: float) -> dict:
    return {"gamma_gt_epsilon": bool(gamma > epsilon), "beta_in_range": bool(0 <= beta < gamma)}


def fit_tail_envelope(family, projection, grid: GridSpec, directions=None) -> EnvelopeFit | None:
    """P-side envelope from grid samples, or None when the P range is trivial."""
    samples = collect_samples(family, projection, grid, directions)
    if not samples.p:
        return None
    return fit_envelope(samples.p, Side.P_FORWARD)


def datko_certify(
    family,
    projection,
    grid: GridSpec,
    directions=None,
    config: DatkoConfig | None = None,
    *,
    compatibility: CompatibilityEstimate | None = None,
    epsilon: float | None = None,
    envelope: EnvelopeFit | None = None,
    times=None,
) -> DatkoReport:
    """Evaluate the functional on times x directions and issue a verdict.

    K_est is the smallest K >= 1 for which the inequality holds at every
    sampled point. When ``config.K`` is set, the bound is checked against
    that K (up to the quadrature error); otherwise any finite K_est counts
    as the bound holding. ``epsilon`` overrides the compatibility fit.
    """
    if config is None:
        raise InvalidParam("a DatkoConfig is required")
    if directions is None:
        directions = grid.directions(family.dim)
    if epsilon is None:
        if compatibility is None:
            compatibility = check_compatibility(family, projection, grid)
        epsilon = compatibility.epsilon
    if envelope is None:
        envelope = fit_tail_envelope(family, projection, grid, directions)
    times = grid.times() if times is None else np.atleast_1d(np.asarray(times, dtype=float))

    p, beta = config.p, config.beta
    raw = []
    skipped = 0
    for t in times:
        Pt, Qt = projection.P(t), projection.Q(t)
        for x in directions:
            w = np.exp(p * beta * t) * (opnorm(Pt @ x) ** p + opnorm(Qt @ x) ** p)
            if w == 0:
                skipped += 1
                continue
            val = datko_functional(family, projection, float(t), x, config, envelope)
            raw.append((float(t), tuple(float(c) for c in x), val, w))

    ratios = [v.total / w for _, _, v, w in raw]
    K_est = max([1.0] + ratios)
    K_ref = config.K if config.K is not None else K_est
    per_point = [
        DatkoPoint(t, x, v.D_P, v.D_Q, w, v.error, K_ref * w) for t, x, v, w in raw
    ]
    if config.K is None:
        holds = bool(np.isfinite(K_est))
    else:
        holds = all(pt.D_P + pt.D_Q <= pt.bound_rhs + pt.error for pt in per_point)
    flags = hypothesis_flags(config.gamma, beta, epsilon)
    if not holds:
        verdict = BOUND_FAILS
    elif all(flags.values()):
        verdict = CERTIFIED
    else:
        verdict = HYPOTHESES_FAIL
    max_err = max((pt.error for pt in per_point), default=0.0)
    return DatkoReport(config, per_point, float(K_est), float(epsilon), flags, holds,
                       verdict, float(max_err), skipped)


# ---------------------------------------------------------------------------
# constants in both directions


@dataclass(frozen=True)
class DerivedConstants:
    """Envelopes implied by a Datko bound.

    P side: N1 e^{weight1 s} e^{-rate1 (t-s)}
    Q side: N2 e^{weight2 t} e^{-rate2 (t-s)}
    """

    N1: float
    rate1: float
    weight1: float
    N2: float
    rate2: float
    weight2: float

    def envelopes(self) -> tuple[EnvelopeFit, EnvelopeFit]:
        p = EnvelopeFit(self.N1, self.weight1, self.rate1, Side.P_FORWARD, True, 0.0)
        q = EnvelopeFit(self.N2, self.weight2, self.rate2, Side.Q_BACKWARD, True, 0.0)
        return p, q


def derived_constants(M, epsilon, omega, K, gamma, beta, p) -> DerivedConstants:
    """Dichotomy constants produced by a Datko bound with parameters (K, gamma, beta, p)
    for a family with compatibility constants (M, epsilon, omega).

    For t >= s + 1 the bound gives K^{1/p} M e^{gamma+omega} on both sides.
    For t in [s, s+1) the compatibility bound M e^{eps s} e^{omega (t-s)} is
    folded in, which needs M e^{omega+gamma-eps} (P side) and
    M e^{omega+gamma} (Q side).
    """
    if not gamma > epsilon:
        raise HypothesisViolated(f"need gamma > epsilon, got {gamma} <= {epsilon}")
    if not 0 <= beta < gamma:
        raise HypothesisViolated(f"need 0 <= beta < gamma, got beta = {beta}")
    long = K ** (1.0 / p) * M * np.exp(gamma + omega)
    N1 = max(1.0, long, M * np.exp(omega + gamma - epsilon))
    N2 = max(1.0, long, M * np.exp(omega + gamma))
    w = beta + epsilon
    return DerivedConstants(float(N1), gamma - epsilon, w, float(N2), gamma + epsilon, w)


def necessary_direction_constants(dichotomy: DichotomyConstants, p: float,
                                  gamma: float | None = None,
                                  margin: float = GAMMA_MARGIN,
                                  quadrature: QuadraturePolicy | None = None) -> DatkoConfig:
    """Datko parameters implied by dichotomy constants.

    beta = max(alpha1, alpha2), gamma defaults to half of nu = min(nu1, nu2)
    and is capped at nu - margin, K = max((N1^p + N2^p) / (p (nu - gamma)), 1).
    """
    fits = [f for f in (dichotomy.p_fit, dichotomy.q_fit) if f is not None]
    if not dichotomy.dichotomy or not fits:
        raise InvalidParam("a feasible set of dichotomy constants is required")
    nu = min(f.nu for f in fits)
    beta = max(f.alpha for f in fits)
    if gamma is None:
        gamma = nu / 2
    gamma = min(gamma, nu - margin)
    if not gamma > 0:
        raise InvalidParam("no admissible gamma below the decay rate")
    K = max(sum(f.N ** p for f in fits) / (p * (nu - gamma)), 1.0)
    return DatkoConfig(p, float(gamma), float(beta), float(K), quadrature or QuadraturePolicy())
