"""Fitting and certification of exponential dichotomy envelopes.

A P-forward sample is a norm ratio ||U(t,s)P(s)x|| / ||P(s)x||, a
Q-backward sample is ||U_Q(s,t)Q(t)x|| / ||Q(t)x||. An envelope for a side
is a triple (N, alpha, nu) with

    P side:  log v <= log N + alpha * s - nu * (t - s)
    Q side:  log v <= log N + alpha * t - nu * (t - s),   alpha < nu.

Writing kappa = nu (P side) or kappa = nu - alpha (Q side), both sides
become ``log v <= log N + alpha * s - kappa * (t - s)``; kappa is the decay
rate seen along trajectories started at time 0. Fits are solved in the
log domain as lexicographic linear programs over (log N, alpha, kappa).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _lp
from .core import GridSpec, evaluate_UQ_inverse, opnorm, trajectory_norms
from .errors import EmptyRange, NoSamples, SingularRestriction

NU_MIN = 1e-3
BOUND_MAX = 1e3
GROWTH_TOL = 1e-8


class Side(str, enum.Enum):
    P_FORWARD = "P-forward"
    Q_BACKWARD = "Q-backward"


@dataclass(frozen=True)
class EnvelopeSample:
    t: float
    s: float
    value: float
    side: Side
    sequence: str | None = None

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("sample values must be positive")
        if self.t < self.s or self.s < 0:
            raise ValueError("samples need t >= s >= 0")


@dataclass(frozen=True)
class EnvelopeFit:
    N: float
    alpha: float
    nu: float
    side: Side
    feasible: bool
    slack: float
    n_samples: int = 0

    @property
    def weight(self) -> str:
        """Time variable carrying the nonuniform factor e^{alpha w}."""
        return "s" if self.side is Side.P_FORWARD else "t"

    @property
    def kappa(self) -> float:
        return self.nu if self.side is Side.P_FORWARD else self.nu - self.alpha

    @property
    def alpha_below_nu(self) -> bool:
        return self.alpha < self.nu

    def log_bound(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        w = s if self.side is Side.P_FORWARD else t
        return np.log(self.N) + self.alpha * w - self.nu * (t - s)


def _arrays(samples: Sequence[EnvelopeSample]):
    a = np.array([(x.t, x.s, x.value) for x in samples], dtype=float).reshape(-1, 3)
    return a[:, 0], a[:, 1], a[:, 2]


def _check_side(samples, side):
    if not samples:
        raise NoSamples("no samples to fit")
    if any(x.side is not side for x in samples):
        raise ValueError(f"all samples must be on side {side.value}")


def envelope_margin(samples, side: Side, N: float, alpha: float, nu: float,
                    weight: str | None = None) -> float:
    """Largest log-violation of the envelope (N, alpha, nu) over the samples.

    ``weight`` defaults to the side's own convention ("s" for P, "t" for Q);
    passing the other one evaluates the swapped inequality.
    """
    t, s, v = _arrays(samples)
    if weight is None:
        weight = "s" if side is Side.P_FORWARD else "t"
    w = s if weight == "s" else t
    return float(np.max(np.log(v) - (np.log(N) + alpha * w - nu * (t - s))))


def fit_envelope(
    samples: Sequence[EnvelopeSample],
    side: Side,
    nu_min: float = NU_MIN,
    *,
    alpha: float | None = None,
    max_log_n: float | None = None,
    bound_max: float = BOUND_MAX,
) -> EnvelopeFit:
    """Fit (N, alpha, nu) to samples of one side.

    Lexicographic objective: smallest N first, then the largest decay rate
    kappa along trajectories from time 0, then the smallest alpha. Passing
    ``alpha`` pins the nonuniformity exponent (``alpha=0`` is the uniform
    fit). With ``max_log_n`` the fit is infeasible when the required log N
    exceeds the cap; ``slack`` then holds the excess.
    """
    _check_side(samples, side)
    t, s, v = _arrays(samples)
    tau = t - s
    logv = np.log(v)
    # log v <= logN + alpha s - kappa tau
    A = np.column_stack([-np.ones_like(s), -s, tau])
    b = -logv
    a_bounds = (alpha, alpha) if alpha is not None else (0.0, bound_max)
    x = _lp.lexicographic_lp(
        A,
        b,
        [(0.0, None), a_bounds, (nu_min, bound_max)],
        [[1, 0, 0], [0, 0, -1], [0, 1, 0]],
    )
    if x is None:
        return EnvelopeFit(np.inf, np.nan, np.nan, side, False, np.inf, len(samples))
    _, a, kappa = (float(z) for z in x)
    a = max(a, 0.0) if alpha is None else float(alpha)
    kappa = max(kappa, nu_min)
    logN = max(0.0, float(np.max(logv - a * s + kappa * tau)))
    nu = kappa if side is Side.P_FORWARD else kappa + a
    feasible = max_log_n is None or logN <= max_log_n
    slack = logN - max_log_n if not feasible else float(np.max(logv - logN - a * s + kappa * tau))
    return EnvelopeFit(float(np.exp(logN)), a, nu, side, bool(feasible), float(slack), len(samples))


@dataclass
class SampleSet:
    """Samples from both sides; empty sides are flagged, not failed."""

    p: list
    q: list

    @property
    def p_empty(self) -> bool:
        return not self.p

    @property
    def q_empty(self) -> bool:
        return not self.q

    def side(self, side: Side) -> list:
        out = self.p if side is Side.P_FORWARD else self.q
        if not out:
            raise EmptyRange(f"{side.value} range is trivial on the whole grid")
        return out


def collect_samples(family, projection, grid, directions=None, sequence=None) -> SampleSet:
    """Sample both sides on the grid pairs.

    ``grid`` is a :class:`GridSpec` or an explicit list of (t, s) pairs.
    """
    pairs = grid.pairs() if isinstance(grid, GridSpec) else list(grid)
    if directions is None:
        if not isinstance(grid, GridSpec):
            raise ValueError("directions are required with an explicit pair list")
        directions = grid.directions(family.dim)
    p_rows, q_rows = trajectory_norms(family, projection, pairs, directions)
    p = [EnvelopeSample(t, s, v, Side.P_FORWARD, sequence) for t, s, v in p_rows]
    q = [EnvelopeSample(t, s, v, Side.Q_BACKWARD, sequence) for t, s, v in q_rows]
    return SampleSet(p, q)


# ---------------------------------------------------------------------------
# divergence witnesses


@dataclass(frozen=True)
class WitnessReport:
    """Outcome of a refutation search.

    ``feasible`` is False when some candidate sequence forces the constant N
    to grow without bound; ``witness`` holds that sequence and
    ``log_lower_bounds`` the lower bounds on log N it produces under the
    most favourable admissible constants.
    """

    feasible: bool
    witness: tuple | None = None
    log_lower_bounds: tuple | None = None
    label: str | None = None

    @property
    def lower_bounds(self):
        return None if self.log_lower_bounds is None else tuple(np.exp(self.log_lower_bounds))

    @property
    def growth_factors(self):
        if self.log_lower_bounds is None:
            return None
        return tuple(np.exp(np.diff(self.log_lower_bounds)))


def sequence_lower_bounds(samples, nu_min: float = NU_MIN):
    """log N lower bounds log v + nu_min (t - s) along a sequence, i.e.
    under the most favourable admissible choice alpha = 0, rate = nu_min."""
    t, s, v = _arrays(samples)
    return np.log(v) + nu_min * (t - s)


def _refutes(samples, nu_min, uniform, min_steps, growth_tol) -> bool:
    if len(samples) < min_steps + 1:
        return False
    t, s, _ = _arrays(samples)
    tau = t - s
    if np.any(np.diff(tau) < -1e-12):
        return False
    if not uniform and np.any(np.diff(s) > 1e-12):
        # alpha can grow freely; only non-increasing s keeps e^{alpha s} fixed
        return False
    inc = np.diff(sequence_lower_bounds(samples, nu_min))
    return bool(np.all(inc >= growth_tol))


def refute_envelope(
    sequences: Iterable[Sequence[EnvelopeSample]] | Sequence[EnvelopeSample],
    side: Side,
    nu_min: float = NU_MIN,
    *,
    uniform: bool,
    min_steps: int = 3,
    growth_tol: float = GROWTH_TOL,
) -> WitnessReport:
    """Search candidate sequences for one along which every admissible
    envelope needs a strictly increasing N.

    Along consecutive samples the bound log N >= log v - alpha s + kappa (t-s)
    must increase for every alpha >= 0 (alpha = 0 when ``uniform``) and every
    kappa >= nu_min. That is the case exactly when t - s is non-decreasing,
    s is non-increasing (unless uniform) and log v + nu_min (t - s) strictly
    increases. Samples carrying a ``sequence`` label are grouped by it; an
    unlabelled flat list is treated as one sequence in the given order.
    """
    seqs = _as_sequences(sequences)
    for label, seq in seqs:
        if any(x.side is not side for x in seq):
            raise ValueError(f"all samples must be on side {side.value}")
        if _refutes(seq, nu_min, uniform, min_steps, growth_tol):
            return WitnessReport(
                False,
                tuple((x.t, x.s, x.value) for x in seq),
                tuple(sequence_lower_bounds(seq, nu_min)),
                label,
            )
    return WitnessReport(True)


def _as_sequences(sequences):
    items = list(sequences)
    if not items:
        return []
    if isinstance(items[0], EnvelopeSample):
        groups: dict = {}
        for x in items:
            groups.setdefault(x.sequence, []).append(x)
        return list(groups.items())
    return [(seq[0].sequence if seq else None, list(seq)) for seq in items]


def certify_uniform(samples, side: Side, nu_min: float = NU_MIN, **kwargs) -> WitnessReport:
    """Feasibility of the alpha = 0 envelope against witness sequences."""
    return refute_envelope(samples, side, nu_min, uniform=True, **kwargs)


def witness_pairs(horizon: float, terms: int = 7):
    """Candidate (label, [(t, s), ...]) sequences for witness searches.

    Resonant progressions with steps pi/2, pi, 2 pi started at 0 and pi/2,
    fixed-lag progressions, and a generic unit-step progression.
    """
    out = []
    steps = {"pi/2": np.pi / 2, "pi": np.pi, "2pi": 2 * np.pi, "1": 1.0}
    for name, h in steps.items():
        n = max(terms, int(horizon / h) + 1)
        for off_name, off in (("0", 0.0), ("pi/2", np.pi / 2)):
            ts = off + h * np.arange(n)
            out.append((f"s=0,t={off_name}+n*{name}", [(float(t), 0.0) for t in ts]))
        for lag_name, lag in (("pi/2", np.pi / 2), ("1", 1.0)):
            ss = h * np.arange(n)
            out.append((f"t-s={lag_name},s=n*{name}", [(float(s + lag), float(s)) for s in ss]))
    return out


def witness_sequences(family, projection, directions, horizon: float, extra=(), terms: int = 7):
    """Evaluate candidate sequences; returns (P sequences, Q sequences)."""
    cands = list(witness_pairs(horizon, terms)) + list(extra)
    p_seqs, q_seqs = [], []
    for label, pairs in cands:
        pairs = _invertible_prefix(family, projection, pairs)
        for k, x in enumerate(np.atleast_2d(directions)):
            ss = collect_samples(family, projection, pairs, [x], sequence=f"{label}|x{k}")
            # a sequence is only meaningful if no sample was dropped
            if len(ss.p) == len(pairs):
                p_seqs.append(ss.p)
            if len(ss.q) == len(pairs):
                q_seqs.append(ss.q)
    return p_seqs, q_seqs


def _invertible_prefix(family, projection, pairs):
    """Truncate a candidate sequence before the first pair whose
    Q-restriction is numerically singular."""
    for k, (t, s) in enumerate(pairs):
        try:
            evaluate_UQ_inverse(family, projection, s, t)
        except SingularRestriction:
            return pairs[:k]
    return pairs


# ---------------------------------------------------------------------------
# full certification


@dataclass
class DichotomyConstants:
    p_fit: EnvelopeFit | None
    q_fit: EnvelopeFit | None
    uniform: bool
    merged: tuple | None
    dichotomy: bool
    p_witness: WitnessReport = field(default_factory=lambda: WitnessReport(True))
    q_witness: WitnessReport = field(default_factory=lambda: WitnessReport(True))
    uniform_witness: WitnessReport = field(default_factory=lambda: WitnessReport(True))
    alpha_gap_ok: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def region(self) -> str:
        return self.diagnostics.get("region", "")


def merge_constants(p_fit: EnvelopeFit | None, q_fit: EnvelopeFit | None):
    """Single (N, alpha, nu) with factor e^{alpha s} on both sides.

    The Q bound N2 e^{alpha2 t} e^{-nu2 (t-s)} equals
    N2 e^{alpha2 s} e^{-(nu2 - alpha2)(t-s)}, so the merged rate is
    min(nu1, nu2 - alpha2).
    """
    fits = [f for f in (p_fit, q_fit) if f is not None]
    if not fits:
        return None
    N = max(f.N for f in fits)
    alpha = max(f.alpha for f in fits)
    nu = min(f.kappa for f in fits)
    return (N, alpha, nu)


def certify_dichotomy(
    family,
    projection,
    grid: GridSpec,
    directions=None,
    nu_min: float = NU_MIN,
    *,
    max_log_n: float | None = None,
    witness_horizon: float | None = None,
    extra_witnesses=(),
) -> DichotomyConstants:
    """Fit both sides, search for divergence witnesses and merge.

    The verdict is grid-relative: both sides must admit a fitted envelope
    with no candidate sequence refuting it, and alpha_2 < nu_2.
    """
    if directions is None:
        directions = grid.directions(family.dim)
    samples = collect_samples(family, projection, grid, directions)
    horizon = witness_horizon if witness_horizon is not None else 2 * grid.t_max
    p_seqs, q_seqs = witness_sequences(family, projection, directions, horizon, extra_witnesses)

    p_fit = fit_envelope(samples.p, Side.P_FORWARD, nu_min, max_log_n=max_log_n) if samples.p else None
    q_fit = fit_envelope(samples.q, Side.Q_BACKWARD, nu_min, max_log_n=max_log_n) if samples.q else None
    p_wit = refute_envelope(p_seqs, Side.P_FORWARD, nu_min, uniform=False) if p_seqs else WitnessReport(True)
    q_wit = refute_envelope(q_seqs, Side.Q_BACKWARD, nu_min, uniform=False) if q_seqs else WitnessReport(True)
    gap_ok = q_fit is None or q_fit.alpha_below_nu

    def side_ok(fit, wit):
        return fit is None or (fit.feasible and wit.feasible)

    dich = side_ok(p_fit, p_wit) and side_ok(q_fit, q_wit) and gap_ok

    up = refute_envelope(p_seqs, Side.P_FORWARD, nu_min, uniform=True) if p_seqs else WitnessReport(True)
    uq = refute_envelope(q_seqs, Side.Q_BACKWARD, nu_min, uniform=True) if q_seqs else WitnessReport(True)
    uniform_wit = up if not up.feasible else uq
    uniform = bool(dich and up.feasible and uq.feasible)

    return DichotomyConstants(
        p_fit,
        q_fit,
        uniform,
        merge_constants(p_fit, q_fit) if dich else None,
        bool(dich),
        p_wit,
        q_wit,
        uniform_wit,
        bool(gap_ok),
        {
            "region": f"[0, {grid.t_max}]",
            "p_empty": samples.p_empty,
            "q_empty": samples.q_empty,
            "n_p": len(samples.p),
            "n_q": len(samples.q),
            "witness_horizon": horizon,
        },
    )


def projection_norm_curve(projection, grid) -> list:
    """[(t, ||P(t)||)] on the grid times (or an explicit time array)."""
    times = grid.times() if isinstance(grid, GridSpec) else np.asarray(grid, dtype=float)
    return [(float(t), opnorm(projection.P(t))) for t in times]
