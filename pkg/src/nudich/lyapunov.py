"""Integral Lyapunov functions for compatible projection families.

For a weight H with ||H(t)x|| <= e^{gamma t}||P(t)x|| + e^{-gamma t}||Q(t)x||
the constructed function is

    L(t, x) = 2 int_t^inf ||H(tau) U_P(tau,t) x||^2 dtau
              - 2 int_0^t ||H(tau) U_Q(tau,t) x||^2 dtau.

It is quadratic in x, nonnegative on P(t)X, nonpositive on Q(t)X and
decreases along trajectories by at least int_s^t ||H U(tau,s) x||^2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import CompatibilityEstimate, GridSpec, check_compatibility, evaluate, opnorm
from .datko import (
    DatkoConfig,
    QuadraturePolicy,
    backward_vectors,
    datko_certify,
    datko_functional,
    derived_constants,
    envelope_tail,
    fit_tail_envelope,
    forward_vectors,
    improper_integral,
)
from .envelope import (
    DichotomyConstants,
    Side,
    collect_samples,
    envelope_margin,
    merge_constants,
)
from .errors import HypothesisViolated, NotQuadratic
from .quadrature import QuadResult, integrate

MEMBERSHIP_RTOL = 1e-12


class HKind(str, enum.Enum):
    CANONICAL = "Canonical"
    USER_SUPPLIED = "UserSupplied"


@dataclass(frozen=True, eq=False)
class HFunction:
    gamma: float
    kind: HKind
    map: Callable[[float], np.ndarray]

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self.map(float(t)), dtype=float)

    def many(self, taus) -> np.ndarray:
        return np.stack([self(t) for t in np.atleast_1d(taus)])


@dataclass(frozen=True)
class _Canonical:
    projection: object
    gamma: float

    def __call__(self, t):
        g = self.gamma
        return np.exp(g * t) * self.projection.P(t) + np.exp(-g * t) * self.projection.Q(t)


def canonical_H(projection, gamma: float) -> HFunction:
    """H(t) = e^{gamma t} P(t) + e^{-gamma t} Q(t)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return HFunction(float(gamma), HKind.CANONICAL, _Canonical(projection, float(gamma)))


def membership_excess(H: HFunction, projection, times, directions) -> float:
    """Largest relative excess of ||H(t)x|| over the admissible bound."""
    worst = -np.inf
    g = H.gamma
    for t in times:
        Ht, Pt, Qt = H(t), projection.P(t), projection.Q(t)
        for x in directions:
            bound = np.exp(g * t) * opnorm(Pt @ x) + np.exp(-g * t) * opnorm(Qt @ x)
            worst = max(worst, (opnorm(Ht @ x) - bound) / max(bound, 1e-300))
    return float(worst)


class LyapunovEvaluator:
    """Evaluates the constructed L(t, x) for one (family, projection, H).

    Membership of H in the admissible class is checked on ``grid`` at
    construction. The forward tail is bounded with a P-side envelope, fitted
    on the same grid unless one is passed in.
    """

    def __init__(self, family, projection, H: HFunction, grid: GridSpec | None = None,
                 policy: QuadraturePolicy | None = None, envelope=None, directions=None):
        self.family = family
        self.projection = projection
        self.H = H
        self.grid = grid or GridSpec(t_max=10.0, time_points=21)
        self.policy = policy or QuadraturePolicy()
        dirs = self.grid.directions(family.dim) if directions is None else directions
        self.membership = membership_excess(H, projection, self.grid.times(), dirs)
        if self.membership > MEMBERSHIP_RTOL:
            raise HypothesisViolated(
                f"H violates the admissible bound on the grid (relative excess {self.membership:.3e})"
            )
        self._envelope = envelope

    @property
    def envelope(self):
        if self._envelope is None:
            self._envelope = fit_tail_envelope(self.family, self.projection, self.grid)
        return self._envelope

    def _weighted_sq(self, vectors, taus):
        hv = np.einsum("kij,kj->ki", self.H.many(taus), vectors)
        return np.sum(hv * hv, axis=1)

    def forward(self, t: float, x) -> tuple[QuadResult, float]:
        """int_t^inf ||H U_P(tau,t) x||^2 and its tail bound."""
        x = np.asarray(x, dtype=float)
        px = opnorm(self.projection.P(t) @ x)
        if px == 0:
            return QuadResult(0.0, 0.0, 0), 0.0
        g = self.H.gamma
        # on P-range vectors ||H y|| <= e^{gamma tau} ||y||
        base = envelope_tail(self.envelope, 2.0, g, t, px)

        def tail(L):
            return np.exp(2 * g * t) * base(L)

        def f(taus):
            return self._weighted_sq(forward_vectors(self.family, self.projection, t, x, taus), taus)

        res, tb, _ = improper_integral(f, t, tail, self.policy)
        return res, tb

    def backward(self, t: float, x) -> QuadResult:
        """int_0^t ||H U_Q(tau,t) x||^2."""
        x = np.asarray(x, dtype=float)
        if t == 0 or opnorm(self.projection.Q(t) @ x) == 0:
            return QuadResult(0.0, 0.0, 0)

        def f(taus):
            return self._weighted_sq(backward_vectors(self.family, self.projection, t, x, taus), taus)

        pol = self.policy
        return integrate(f, 0.0, t, pol.abs_tol, pol.rel_tol, pol.panels, pol.max_panels)

    def along(self, s: float, t: float, x) -> QuadResult:
        """int_s^t ||H(tau) U(tau,s) x||^2."""
        x = np.asarray(x, dtype=float)
        if t == s:
            return QuadResult(0.0, 0.0, 0)

        def f(taus):
            return self._weighted_sq(self.family.evaluate_many(taus, s) @ x, taus)

        pol = self.policy
        return integrate(f, s, t, pol.abs_tol, pol.rel_tol, pol.panels, pol.max_panels)


@dataclass(frozen=True)
class LyapunovValue:
    value: float
    forward: float
    backward: float
    error: float
    tail_bound: float


def build_lyapunov(evaluator: LyapunovEvaluator, t: float, x) -> LyapunovValue:
    if t < 0:
        raise ValueError("t must be nonnegative")
    fw, tb = evaluator.forward(t, x)
    bw = evaluator.backward(t, x)
    err = 2 * (fw.error + tb + bw.error)
    return LyapunovValue(2 * fw.value - 2 * bw.value, fw.value, bw.value, err, tb)


@dataclass(frozen=True)
class ResidualRow:
    t: float
    s: float
    x: tuple
    residual: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.tolerance


@dataclass(frozen=True)
class ResidualReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)


def check_lyapunov_inequality(evaluator: LyapunovEvaluator, triples, lyapunov=None) -> ResidualReport:
    """Residuals r = L(t, U(t,s)x) + int_s^t ||H U(tau,s) x||^2 - L(s, x).

    ``lyapunov`` replaces the constructed L by any callable (t, x) -> float,
    which is how a candidate function is tested; its own error is taken as 0.
    """
    rows = []
    for t, s, x in triples:
        if t < s:
            raise ValueError(f"need t >= s, got t={t}, s={s}")
        x = np.asarray(x, dtype=float)
        y = evaluate(evaluator.family, t, s) @ x
        mid = evaluator.along(s, t, x)
        if lyapunov is None:
            a, b = build_lyapunov(evaluator, t, y), build_lyapunov(evaluator, s, x)
            lt, ls, err = a.value, b.value, a.error + b.error
        else:
            lt, ls, err = float(lyapunov(t, y)), float(lyapunov(s, x)), 0.0
        # the three terms are of similar size; leave room for their rounding
        scale = max(abs(lt), abs(ls), abs(mid.value))
        tol = err + mid.error + 64 * np.finfo(float).eps * scale
        r = 0.0 if t == s else lt + mid.value - ls
        rows.append(ResidualRow(float(t), float(s), tuple(map(float, x)), float(r), float(tol)))
    return ResidualReport(rows)


@dataclass(frozen=True)
class L12Report:
    K: float
    tightest_K: float
    l1_holds: bool
    l2_holds: bool
    min_p_value: float
    max_q_value: float
    n_points: int


def l1_weight(projection, t, x, gamma, beta) -> float:
    return (np.exp(2 * (gamma + beta) * t) * opnorm(projection.P(t) @ x) ** 2
            + np.exp(-2 * (gamma - beta) * t) * opnorm(projection.Q(t) @ x) ** 2)


def check_L1_L2(evaluator: LyapunovEvaluator, K: float, gamma: float, beta: float,
                grid: GridSpec, directions=None, times=None) -> L12Report:
    """Growth bound (L1) with constant K and the sign conditions (L2).

    Reports the tightest constant for (L1) over the sampled points.
    """
    proj = evaluator.projection
    if directions is None:
        directions = grid.directions(evaluator.family.dim)
    times = grid.times() if times is None else times
    tight, holds = 0.0, True
    min_p, max_q = np.inf, -np.inf
    n = 0
    for t in times:
        Pt, Qt = proj.P(t), proj.Q(t)
        for x in directions:
            w = l1_weight(proj, t, x, gamma, beta)
            val = build_lyapunov(evaluator, t, x)
            if w > 0:
                tight = max(tight, abs(val.value) / w)
                holds = holds and abs(val.value) <= K * w + val.error
            lp = build_lyapunov(evaluator, t, Pt @ x).value
            lq = build_lyapunov(evaluator, t, Qt @ x).value
            min_p, max_q = min(min_p, lp), max(max_q, lq)
            n += 1
    l2 = bool(min_p >= 0 and max_q <= 0)
    return L12Report(float(K), float(tight), bool(holds), l2, float(min_p), float(max_q), n)


# ---------------------------------------------------------------------------
# sufficiency chain


def _chain_links(evaluator, family, projection, t, x, K, gamma, beta, policy):
    """Each inequality in the chain from the Datko integrals (p = 2) to
    K e^{2 beta t} (||Px||^2 + ||Qx||^2), at one point."""
    Pt, Qt = projection.P(t), projection.Q(t)
    d = datko_functional(family, projection, t, x, DatkoConfig(2.0, gamma, beta, quadrature=policy),
                         evaluator.envelope)
    lp = build_lyapunov(evaluator, t, Pt @ x)
    lq = build_lyapunov(evaluator, t, Qt @ x)
    weighted = np.exp(-2 * gamma * t) * lp.forward + np.exp(2 * gamma * t) * lq.backward
    via_l = np.exp(-2 * gamma * t) * abs(lp.value) + np.exp(2 * gamma * t) * abs(lq.value)
    final = K * np.exp(2 * beta * t) * (opnorm(Pt @ x) ** 2 + opnorm(Qt @ x) ** 2)
    err = d.error + np.exp(-2 * gamma * t) * lp.error + np.exp(2 * gamma * t) * lq.error
    scale = max(d.total, weighted, 1e-300)
    identity = abs(d.total - weighted) <= err + 1e-9 * scale
    return {
        "t": float(t),
        "x": tuple(map(float, x)),
        "datko": d.total,
        "weighted": float(weighted),
        "via_lyapunov": float(via_l),
        "bound": float(final),
        "identity_ok": bool(identity),
        "lyapunov_ok": bool(weighted <= via_l + err),
        "l1_ok": bool(via_l <= final + err),
    }


def theorem_3_4_pipeline(family, projection, K: float, gamma: float, beta: float,
                         grid: GridSpec, directions=None, *,
                         compatibility: CompatibilityEstimate | None = None,
                         epsilon: float | None = None,
                         policy: QuadraturePolicy | None = None,
                         times=None, margin_tol: float = 1e-9) -> DichotomyConstants:
    """Lyapunov route to dichotomy constants.

    With the canonical H, the Datko integrals at p = 2 equal
    e^{-2 gamma t} int ||H U_P||^2 + e^{2 gamma t} int ||H U_Q||^2, which the
    Lyapunov function and (L1) bound by K e^{2 beta t}(||Px||^2 + ||Qx||^2).
    Every link is checked on the grid, the Datko certification is run with
    the same K, and the derived envelopes are tested against the samples.
    """
    policy = policy or QuadraturePolicy()
    if compatibility is None:
        compatibility = check_compatibility(family, projection, grid)
    eps = compatibility.epsilon if epsilon is None else float(epsilon)
    if not gamma > eps:
        raise HypothesisViolated(f"need gamma > epsilon, got {gamma} <= {eps}")
    if not 0 <= beta < gamma:
        raise HypothesisViolated(f"need 0 <= beta < gamma, got beta = {beta}")
    if directions is None:
        directions = grid.directions(family.dim)
    times = grid.times() if times is None else np.atleast_1d(times)

    evaluator = LyapunovEvaluator(family, projection, canonical_H(projection, gamma), grid, policy)
    links = [
        _chain_links(evaluator, family, projection, float(t), x, K, gamma, beta, policy)
        for t in times
        for x in directions
    ]
    chain_ok = all(r["identity_ok"] and r["lyapunov_ok"] and r["l1_ok"] for r in links)

    report = datko_certify(family, projection, grid, directions,
                           DatkoConfig(2.0, gamma, beta, K, policy),
                           epsilon=eps, envelope=evaluator.envelope, times=times)
    dc = derived_constants(compatibility.M, eps, compatibility.omega, K, gamma, beta, 2.0)
    p_env, q_env = dc.envelopes()
    samples = collect_samples(family, projection, grid, directions)
    p_margin = envelope_margin(samples.p, Side.P_FORWARD, p_env.N, p_env.alpha, p_env.nu) if samples.p else -np.inf
    q_margin = envelope_margin(samples.q, Side.Q_BACKWARD, q_env.N, q_env.alpha, q_env.nu) if samples.q else -np.inf
    envelopes_ok = p_margin <= margin_tol and q_margin <= margin_tol
    ok = bool(chain_ok and report.certified and envelopes_ok)
    return DichotomyConstants(
        p_env,
        q_env,
        False,
        merge_constants(p_env, q_env) if ok else None,
        ok,
        alpha_gap_ok=bool(q_env.alpha < q_env.nu),
        diagnostics={
            "region": f"[0, {grid.t_max}]",
            "chain_ok": bool(chain_ok),
            "chain": links,
            "datko_verdict": report.verdict,
            "K_est": report.K_est,
            "epsilon": eps,
            "derived": dc,
            "p_margin": float(p_margin),
            "q_margin": float(q_margin),
        },
    )


# ---------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class QuadraticFormW:
    t: float
    matrix: np.ndarray
    consistency_error: float = 0.0

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.matrix @ x)

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.matrix, self.matrix.T))


def polarize_W(evaluator: LyapunovEvaluator, t: float, basis=None, *, held_out: int = 16,
               seed: int = 0, tol: float = 1e-6) -> QuadraticFormW:
    """Recover the symmetric W(t) with <W(t)x, x> = L(t, x) by polarization.

    ``basis`` holds basis vectors as columns (identity by default). The form
    is cross-checked on ``held_out`` random directions; a relative mismatch
    above ``tol`` raises NotQuadratic.
    """
    n = evaluator.family.dim
    B = np.eye(n) if basis is None else np.asarray(basis, dtype=float)

    def L(v):
        return build_lyapunov(evaluator, t, v).value

    diag = [L(B[:, i]) for i in range(n)]
    G = np.diag(diag)
    for i in range(n):
        for j in range(i + 1, n):
            G[i, j] = G[j, i] = 0.5 * (L(B[:, i] + B[:, j]) - diag[i] - diag[j])
    Binv = np.linalg.inv(B)
    W = Binv.T @ G @ Binv
    W = 0.5 * (W + W.T)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(held_out):
        x = rng.standard_normal(n)
        lx = L(x)
        worst = max(worst, abs(float(x @ W @ x) - lx) / (1 + abs(lx)))
    if worst > tol:
        raise NotQuadratic(f"polarization mismatch {worst:.3e} at t={t}")
    return QuadraticFormW(float(t), W, float(worst))


@dataclass(frozen=True)
class FormConditions:
    condition_2: bool
    condition_3: bool
    condition_4: bool
    tightest_K: float


def check_form_conditions(form: QuadraticFormW, projection, K, gamma, beta, directions) -> FormConditions:
    """Growth bound and the sign conditions on P- and Q-range vectors for W(t)."""
    t = form.t
    Pt, Qt = projection.P(t), projection.Q(t)
    tight = 0.0
    c3 = c4 = True
    for x in directions:
        w = l1_weight(projection, t, x, gamma, beta)
        if w > 0:
            tight = max(tight, abs(form(x)) / w)
        c3 = c3 and form(Pt @ x) >= 0
        c4 = c4 and form(Qt @ x) <= 0
    return FormConditions(bool(tight <= K), bool(c3), bool(c4), float(tight))
