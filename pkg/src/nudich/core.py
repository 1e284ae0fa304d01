"""Evolution families, projection families and their structural checks.

Everything here works on small dense real matrices. Operator norms are
spectral norms; all supremum-over-x conditions are approximated by a finite
set of sampled directions (see :class:`GridSpec`).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import _lp
from .errors import (
    CommutationViolation,
    NonOrderedTimes,
    PropagationFailure,
    RestrictionNotInvertible,
    SingularRestriction,
)

MatrixFn = Callable[[float], np.ndarray]

DEFAULT_SINGULAR_THRESHOLD = 1e-12


def opnorm(A) -> float:
    """Spectral norm of a matrix (Euclidean norm of a vector)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        return float(np.linalg.norm(A))
    return float(np.linalg.norm(A, 2))


class FamilyKind(str, enum.Enum):
    CLOSED_FORM_DIAGONAL = "ClosedFormDiagonal"
    SIMILARITY_TRANSFORMED = "SimilarityTransformed"
    ODE_PROPAGATED = "OdePropagated"
    EXPLICIT = "Explicit"


@dataclass(frozen=True)
class CosineExponent:
    """The exponent f(t) = t (c + d cos^2 t)."""

    c: float
    d: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return t * (self.c + self.d * np.cos(t) ** 2)


class EvolutionFamily:
    """Base class for two-parameter families U(t, s), t >= s >= 0.

    Subclasses implement ``_evaluate``; they may override ``inverse`` and
    ``evaluate_many`` with closed forms.
    """

    dim: int
    kind: FamilyKind

    def _evaluate(self, t: float, s: float) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float, s: float) -> np.ndarray:
        return evaluate(self, t, s)

    def inverse(self, t: float, s: float) -> np.ndarray:
        """U(t,s)^{-1} on the whole space."""
        return np.linalg.inv(self._evaluate(t, s))

    def evaluate_many(self, ts, s: float) -> np.ndarray:
        """Stack of U(t_k, s) for an array of times t_k >= s."""
        return np.stack([evaluate(self, float(t), s) for t in np.atleast_1d(ts)])

    def inverse_many(self, t: float, ss) -> np.ndarray:
        """Stack of U(t, s_k)^{-1} for times s_k <= t."""
        return np.stack([self.inverse(t, float(s)) for s in np.atleast_1d(ss)])

    # closed-form inverses are only available for some kinds
    has_closed_inverse = False


@dataclass(frozen=True, eq=False)
class DiagonalFamily(EvolutionFamily):
    """U(t,s) = diag(exp(sign_i (f_i(t) - f_i(s)))).

    ``sign_i = -1`` gives the forward-contracting form u(s)/u(t) with
    u = e^{f}; ``sign_i = +1`` the expanding form u(t)/u(s).
    """

    exponents: tuple
    signs: tuple
    kind: FamilyKind = field(default=FamilyKind.CLOSED_FORM_DIAGONAL, init=False)
    has_closed_inverse = True

    def __post_init__(self):
        if len(self.exponents) != len(self.signs):
            raise ValueError("one sign per exponent is required")
        if any(sg not in (-1, 1) for sg in self.signs):
            raise ValueError("signs must be +1 or -1")

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def log_diagonal(self, t, s) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack(
            [sg * (f(t) - f(s)) for f, sg in zip(self.exponents, self.signs)], axis=-1
        )

    def _evaluate(self, t, s):
        return np.diag(np.exp(self.log_diagonal(t, s)))

    def inverse(self, t, s):
        return np.diag(np.exp(-self.log_diagonal(t, s)))

    def evaluate_many(self, ts, s):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < s):
            raise NonOrderedTimes(f"need t >= s = {s}")
        d = np.exp(self.log_diagonal(ts, s))
        out = np.zeros((len(ts), self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = d
        return out

    def inverse_many(self, t, ss):
        ss = np.atleast_1d(np.asarray(ss, dtype=float))
        d = np.stack(
            [-sg * (f(t) - f(ss)) for f, sg in zip(self.exponents, self.signs)], axis=-1
        )
        out = np.zeros((len(ss), self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = np.exp(d)
        return out


@dataclass(frozen=True, eq=False)
class SimilarityFamily(EvolutionFamily):
    """V(t,s) = S(t) U(t,s) S(s)^{-1}."""

    base: EvolutionFamily
    S: MatrixFn
    S_inv: MatrixFn
    kind: FamilyKind = field(default=FamilyKind.SIMILARITY_TRANSFORMED, init=False)

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def has_closed_inverse(self):
        return self.base.has_closed_inverse

    def _evaluate(self, t, s):
        return self.S(t) @ self.base._evaluate(t, s) @ self.S_inv(s)

    def inverse(self, t, s):
        return self.S(s) @ self.base.inverse(t, s) @ self.S_inv(t)


@dataclass(frozen=True, eq=False)
class OdeFamily(EvolutionFamily):
    """Solution operator of x' = A(t) x, propagated with an embedded
    Runge-Kutta pair."""

    A: MatrixFn
    dim: int
    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "DOP853"
    kind: FamilyKind = field(default=FamilyKind.ODE_PROPAGATED, init=False)

    def _rhs(self, t, y):
        n = self.dim
        return (self.A(t) @ y.reshape(n, n)).ravel()

    def _propagate(self, ts, s):
        n = self.dim
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        t_end = float(ts.max())
        if t_end == s:
            return np.broadcast_to(np.eye(n), (len(ts), n, n)).copy()
        sol = solve_ivp(
            self._rhs,
            (s, t_end),
            np.eye(n).ravel(),
            method=self.method,
            t_eval=np.unique(ts),
            rtol=self.rtol,
            atol=self.atol,
        )
        if not sol.success:
            raise PropagationFailure(sol.message)
        lookup = dict(zip(sol.t, sol.y.T))
        return np.stack([lookup[t].reshape(n, n) for t in ts])

    def _evaluate(self, t, s):
        return self._propagate([t], s)[0]

    def evaluate_many(self, ts, s):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < s):
            raise NonOrderedTimes(f"need t >= s = {s}")
        return self._propagate(ts, s)


@dataclass(frozen=True, eq=False)
class MatrixFamily(EvolutionFamily):
    """A family given directly by a callable (t, s) -> matrix."""

    func: Callable[[float, float], np.ndarray]
    dim: int
    inverse_func: Callable[[float, float], np.ndarray] | None = None
    kind: FamilyKind = field(default=FamilyKind.EXPLICIT, init=False)

    @property
    def has_closed_inverse(self):
        return self.inverse_func is not None

    def _evaluate(self, t, s):
        return np.asarray(self.func(t, s), dtype=float)

    def inverse(self, t, s):
        if self.inverse_func is not None:
            return np.asarray(self.inverse_func(t, s), dtype=float)
        return super().inverse(t, s)


def evaluate(family: EvolutionFamily, t: float, s: float) -> np.ndarray:
    """Return U(t, s). Raises NonOrderedTimes unless t >= s >= 0."""
    if t < s:
        raise NonOrderedTimes(f"t = {t} < s = {s}")
    if s < 0:
        raise NonOrderedTimes(f"s = {s} < 0")
    if t == s:
        return np.eye(family.dim)
    return family._evaluate(float(t), float(s))


# ---------------------------------------------------------------------------
# projections


@dataclass(frozen=True)
class ConstantMatrix:
    """Picklable constant matrix-valued function."""

    matrix: tuple

    def __call__(self, t):
        return np.array(self.matrix, dtype=float)


@dataclass(frozen=True, eq=False)
class ProjectionFamily:
    dim: int
    projector: MatrixFn

    def P(self, t: float) -> np.ndarray:
        return np.asarray(self.projector(t), dtype=float)

    def Q(self, t: float) -> np.ndarray:
        return np.eye(self.dim) - self.P(t)


def constant_projection(matrix) -> ProjectionFamily:
    m = np.asarray(matrix, dtype=float)
    return ProjectionFamily(m.shape[0], ConstantMatrix(tuple(map(tuple, m))))


def coordinate_projection(dim: int, indices: Sequence[int]) -> ProjectionFamily:
    """Orthogonal projection onto the listed coordinate axes."""
    m = np.zeros((dim, dim))
    for i in indices:
        m[i, i] = 1.0
    return constant_projection(m)


def projection_residual(projection: ProjectionFamily, times) -> float:
    """max_t ||P(t)^2 - P(t)|| relative to max(1, ||P(t)||)."""
    worst = 0.0
    for t in times:
        P = projection.P(t)
        worst = max(worst, opnorm(P @ P - P) / max(1.0, opnorm(P)))
    return worst


def _range_basis(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of the range of a projection matrix."""
    U, sv, _ = np.linalg.svd(M)
    rank = int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 1.0)))
    return U[:, :rank]


def evaluate_UQ_inverse(
    family: EvolutionFamily,
    projection: ProjectionFamily,
    s: float,
    t: float,
    singular_threshold: float = DEFAULT_SINGULAR_THRESHOLD,
) -> np.ndarray:
    """U_Q(s,t) Q(t): the inverse of U(t,s) restricted to Q(s)X -> Q(t)X,
    extended to the whole space by precomposition with Q(t)."""
    if t < s or s < 0:
        raise NonOrderedTimes(f"need t >= s >= 0, got t={t}, s={s}")
    Qs, Qt = projection.Q(s), projection.Q(t)
    Bs, Bt = _range_basis(Qs), _range_basis(Qt)
    n = family.dim
    if Bs.shape[1] == 0:
        return np.zeros((n, n))
    if Bs.shape[1] != Bt.shape[1]:
        raise SingularRestriction("Q(s) and Q(t) have different ranks")
    R = Bt.T @ evaluate(family, t, s) @ Bs
    sv = np.linalg.svd(R, compute_uv=False)
    if sv.min() < singular_threshold:
        raise SingularRestriction(
            f"smallest restricted singular value {sv.min():.3e} below {singular_threshold:.1e}"
        )
    return Bs @ np.linalg.solve(R, Bt.T @ Qt)


def uq_many(family, projection, ss, t) -> np.ndarray:
    """Stack of U_Q(s_k, t) Q(t) for s_k <= t, using a closed-form inverse
    when the family provides one."""
    ss = np.atleast_1d(np.asarray(ss, dtype=float))
    if family.has_closed_inverse:
        Qt = projection.Q(t)
        return family.inverse_many(t, ss) @ Qt
    return np.stack([evaluate_UQ_inverse(family, projection, float(s), t) for s in ss])


# ---------------------------------------------------------------------------
# sampling grids


@dataclass(frozen=True)
class GridSpec:
    """Hybrid time grid plus sampled unit directions.

    The time grid is the union of a uniform grid on [0, t_max], a
    geometric grid accumulating at 0, and (optionally) all multiples of
    ``anchor_period``. Directions are the axis vectors, the normalised
    all-ones vector and ``extra_directions`` pseudo-random unit vectors
    drawn with ``direction_seed``.
    """

    t_max: float = 20.0
    time_points: int = 81
    direction_seed: int = 0
    extra_directions: int = 4
    anchor_period: float | None = None
    geometric_points: int = 6

    def times(self) -> np.ndarray:
        pts = [np.linspace(0.0, self.t_max, self.time_points)]
        if self.geometric_points > 0 and self.t_max > 0:
            lo = min(1e-2, self.t_max / 10)
            pts.append(np.geomspace(lo, self.t_max, self.geometric_points))
        if self.anchor_period:
            k = int(np.floor(self.t_max / self.anchor_period + 1e-9))
            pts.append(self.anchor_period * np.arange(k + 1))
        ts = np.unique(np.round(np.concatenate(pts), 12))
        return ts[ts <= self.t_max]

    def pairs(self):
        """All (t, s) with t >= s from the time grid."""
        ts = self.times()
        return [(float(t), float(s)) for i, t in enumerate(ts) for s in ts[: i + 1]]

    def triples(self, max_times: int = 10):
        ts = self.times()
        if len(ts) > max_times:
            ts = ts[np.linspace(0, len(ts) - 1, max_times).round().astype(int)]
        return [
            (float(t), float(s), float(t0))
            for t0, s, t in itertools.combinations_with_replacement(ts, 3)
        ]

    def directions(self, dim: int) -> np.ndarray:
        """Unit vectors as rows."""
        rows = list(np.eye(dim))
        if dim > 1:
            rows.append(np.ones(dim) / np.sqrt(dim))
        rng = np.random.default_rng(self.direction_seed)
        for _ in range(self.extra_directions):
            v = rng.standard_normal(dim)
            rows.append(v / np.linalg.norm(v))
        return np.array(rows)


# ---------------------------------------------------------------------------
# axiom checks


@dataclass(frozen=True)
class AxiomReport:
    identity_residual: float
    cocycle_residual: float
    continuity_quotient: float
    tol: float
    continuity_bound: float
    passed: bool


def check_axioms(
    family: EvolutionFamily,
    grid: GridSpec,
    tol: float = 1e-9,
    continuity_bound: float = 1e6,
    step: float = 1e-6,
) -> AxiomReport:
    """Residuals of the evolution-family axioms on the grid.

    The cocycle residual is measured relative to ``max(1, ||U(t,t0)||)`` so
    that strongly growing families are judged on the same scale. Continuity
    is tested through scaled difference quotients in t and s.
    """
    n = family.dim
    eye = np.eye(n)
    ident = 0.0
    for t in grid.times():
        ident = max(ident, opnorm(family._evaluate(t, t) - eye))
    coc = 0.0
    cache = {}

    def U(a, b):
        key = (a, b)
        if key not in cache:
            cache[key] = family._evaluate(a, b)
        return cache[key]

    for t, s, t0 in grid.triples():
        lhs = U(t, s) @ U(s, t0)
        rhs = U(t, t0)
        coc = max(coc, opnorm(lhs - rhs) / max(1.0, opnorm(rhs)))
    quot = 0.0
    ts = grid.times()
    for t, s in zip(ts[1:], ts[:-1]):
        base = U(t, s)
        scale = step * max(1.0, opnorm(base))
        dq_t = opnorm(family._evaluate(t + step, s) - base) / scale
        dq_s = opnorm(family._evaluate(t, s + min(step, (t - s) / 2)) - base) / scale
        quot = max(quot, dq_t, dq_s)
    passed = ident <= tol and coc <= tol and np.isfinite(quot) and quot <= continuity_bound
    return AxiomReport(ident, coc, quot, tol, continuity_bound, bool(passed))


# ---------------------------------------------------------------------------
# trajectory norm samples (shared by compatibility and envelope fitting)


def trajectory_norms(family, projection, pairs, directions, zero_tol: float = 1e-12):
    """Raw norm ratios for each (t, s) pair and direction.

    Returns two arrays of rows ``(t, s, value)``: P-forward values
    ||U(t,s)P(s)x|| / ||P(s)x|| and Q-backward values
    ||U_Q(s,t)Q(t)x|| / ||Q(t)x||. Directions with vanishing component
    and samples with vanishing value are dropped.
    """
    X = np.asarray(directions, dtype=float).T
    p_rows, q_rows = [], []
    for t, s in pairs:
        Ps, Qt = projection.P(s), projection.Q(t)
        PX, QX = Ps @ X, Qt @ X
        pn = np.linalg.norm(PX, axis=0)
        qn = np.linalg.norm(QX, axis=0)
        keep = pn > zero_tol
        if keep.any():
            vals = np.linalg.norm(evaluate(family, t, s) @ PX[:, keep], axis=0) / pn[keep]
            p_rows.extend((t, s, v) for v in vals if v > 0)
        keep = qn > zero_tol
        if keep.any():
            UQ = evaluate_UQ_inverse(family, projection, s, t)
            vals = np.linalg.norm(UQ @ QX[:, keep], axis=0) / qn[keep]
            q_rows.extend((t, s, v) for v in vals if v > 0)
    return np.array(p_rows).reshape(-1, 3), np.array(q_rows).reshape(-1, 3)


# ---------------------------------------------------------------------------
# compatibility


@dataclass(frozen=True)
class CompatibilityThresholds:
    commutation: float = 1e-8
    invertibility: float = 1e-8
    singular: float = DEFAULT_SINGULAR_THRESHOLD
    omega_min: float = 1e-3
    bound_max: float = 1e3


@dataclass(frozen=True)
class CompatibilityEstimate:
    M: float
    epsilon: float
    omega: float
    commutation_residual: float
    invertibility_residual: float
    passed: bool
    n_samples: int = 0


def _growth_margin(rows, logM, eps, omega):
    if len(rows) == 0:
        return -np.inf
    t, s, v = rows.T
    return float(np.max(np.log(v) - (logM + eps * s + omega * (t - s))))


def compatibility_margin(family, projection, grid, M, epsilon, omega) -> float:
    """Largest log-violation of the growth bound M e^{eps s} e^{omega (t-s)}
    over both sides (<= 0 means the constants are valid on the grid)."""
    p_rows, q_rows = trajectory_norms(
        family, projection, grid.pairs(), grid.directions(family.dim)
    )
    logM = np.log(M)
    return max(
        _growth_margin(p_rows, logM, epsilon, omega),
        _growth_margin(q_rows, logM, epsilon, omega),
    )


def check_compatibility(
    family: EvolutionFamily,
    projection: ProjectionFamily,
    grid: GridSpec,
    thresholds: CompatibilityThresholds = CompatibilityThresholds(),
) -> CompatibilityEstimate:
    """Check that ``projection`` is compatible with ``family`` on the grid
    and fit the growth constants (M, epsilon, omega).

    The fit is lexicographic: smallest M first, then the smallest growth
    rate omega >= omega_min, then the smallest nonuniformity rate epsilon.
    """
    comm = 0.0
    inv = 0.0
    for t, s in grid.pairs():
        U = evaluate(family, t, s)
        Pt, Ps = projection.P(t), projection.P(s)
        scale = max(1.0, opnorm(U)) * max(1.0, opnorm(Pt), opnorm(Ps))
        comm = max(comm, opnorm(Pt @ U - U @ Ps) / scale)
        Qs = projection.Q(s)
        try:
            UQ = evaluate_UQ_inverse(family, projection, s, t, thresholds.singular)
        except SingularRestriction as exc:
            raise RestrictionNotInvertible(f"at t={t}, s={s}: {exc}") from exc
        # normalised like a backward error: the restricted inverse can be
        # much larger than ||U|| suggests when U mixes growth and decay
        scale = max(1.0, opnorm(UQ) * opnorm(U)) * max(1.0, opnorm(Qs))
        inv = max(inv, opnorm(UQ @ U @ Qs - Qs) / scale)
    if comm > thresholds.commutation:
        raise CommutationViolation(f"commutation residual {comm:.3e}")
    if inv > thresholds.invertibility:
        raise RestrictionNotInvertible(f"invertibility residual {inv:.3e}")

    p_rows, q_rows = trajectory_norms(
        family, projection, grid.pairs(), grid.directions(family.dim)
    )
    rows = np.vstack([p_rows, q_rows])
    t, s, v = rows.T
    # variables: (log M, epsilon, omega); log v <= log M + eps s + omega (t-s)
    A = -np.column_stack([np.ones_like(s), s, t - s])
    b = -np.log(v)
    big = thresholds.bound_max
    x = _lp.lexicographic_lp(
        A,
        b,
        [(0, None), (0, big), (thresholds.omega_min, big)],
        [[1, 0, 0], [0, 0, 1], [0, 1, 0]],
    )
    if x is None:
        return CompatibilityEstimate(np.inf, np.inf, np.inf, comm, inv, False, len(rows))
    _, eps, omega = x
    logM = max(0.0, float(np.max(np.log(v) - eps * s - omega * (t - s))))
    return CompatibilityEstimate(
        float(np.exp(logM)), float(eps), float(omega), comm, inv, True, len(rows)
    )


# ---------------------------------------------------------------------------
# asymptotic trends


@dataclass(frozen=True)
class TrendReport:
    times: np.ndarray
    p_norms: np.ndarray
    q_norms: np.ndarray
    p_decays: bool
    q_grows: bool
    q_trivial: bool
    all_decay: bool

    @property
    def consistent_with_dichotomy(self) -> bool:
        return self.p_decays and (self.q_grows or self.q_trivial)


def check_asymptotics(
    family: EvolutionFamily,
    projection: ProjectionFamily,
    t0: float,
    x0,
    horizon: float,
    samples: int = 101,
    decay_factor: float = 1e-3,
    growth_factor: float = 1e3,
    zero_tol: float = 1e-14,
) -> TrendReport:
    """Sample ||U(t,t0)P(t0)x0|| and ||U(t,t0)Q(t0)x0|| on [t0, horizon].

    The P-part "decays" when its final value is at most ``decay_factor``
    times its initial value; the Q-part "grows" when the final value
    exceeds ``growth_factor`` times the initial one.
    """
    if horizon <= t0:
        raise ValueError("horizon must exceed t0")
    x0 = np.asarray(x0, dtype=float)
    ts = np.linspace(t0, horizon, samples)
    Us = family.evaluate_many(ts, t0)
    px = projection.P(t0) @ x0
    qx = projection.Q(t0) @ x0
    pn = np.linalg.norm(Us @ px, axis=1)
    qn = np.linalg.norm(Us @ qx, axis=1)
    full = np.linalg.norm(Us @ x0, axis=1)
    p_zero = pn[0] <= zero_tol
    q_zero = qn[0] <= zero_tol
    p_decays = bool(p_zero or pn[-1] <= decay_factor * pn[0])
    q_grows = bool((not q_zero) and qn[-1] >= growth_factor * qn[0])
    all_decay = bool(full[0] <= zero_tol or full[-1] <= decay_factor * full[0])
    return TrendReport(ts, pn, qn, p_decays, q_grows, bool(q_zero), all_decay)
