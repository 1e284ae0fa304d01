"""Built-in example systems with closed-form norm oracles.

Four planar systems are provided:

``Ex2_5``
    diag(u(s)/u(t), u(t)/u(s)) with u(t) = exp(t (3 + cos^2 t)): a
    nonuniform but not uniform dichotomy for P = diag(1, 0).
``Ex2_6``
    the similarity transform V(t,s) = S(t) U(t,s) S(s)^{-1} of ``Ex2_5``
    with a projection whose norm grows like t + a.
``Ex2_8``
    the isotropic contraction e^{-(t-s)}; no dichotomy with P = diag(1, 0).
``Ex3_2``
    diag(u1(s)/u1(t), u2(t)/u2(s)) with u1 = exp(t (1 + cos^2 t)),
    u2 = exp(t cos^2 t): the integral bound holds but no dichotomy exists.

Each :class:`PaperExample` carries ``known_facts``: machine-checkable claims
encoded as data and checked uniformly by :func:`verify_fact`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    CosineExponent,
    DiagonalFamily,
    EvolutionFamily,
    GridSpec,
    ProjectionFamily,
    SimilarityFamily,
    check_asymptotics,
    compatibility_margin,
    coordinate_projection,
    evaluate,
    evaluate_UQ_inverse,
    opnorm,
)
from .envelope import (
    Side,
    certify_dichotomy,
    collect_samples,
    envelope_margin,
    refute_envelope,
)
from .errors import InvalidParam

IDS = ("Ex2_5", "Ex2_6", "Ex2_8", "Ex3_2")


@dataclass(frozen=True)
class Fact:
    kind: str
    params: dict
    tol: float = 1e-9
    note: str = ""


@dataclass(frozen=True, eq=False)
class PaperExample:
    id: str
    family: EvolutionFamily
    projection: ProjectionFamily
    known_facts: tuple
    p_norm: Callable | None = None
    q_norm: Callable | None = None
    params: dict = field(default_factory=dict)
    anchor_period: float = np.pi / 2

    def grid(self, t_max: float = 20.0, time_points: int = 81, **kw) -> GridSpec:
        """Default sampling grid including multiples of pi/2."""
        kw.setdefault("anchor_period", self.anchor_period)
        return GridSpec(t_max=t_max, time_points=time_points, **kw)


def generalized_cosine_family(components) -> DiagonalFamily:
    """Diagonal family with exponents t (c + d cos^2 t).

    ``components`` is a sequence of (c, d, sign); sign -1 contracts forward
    in time (u(s)/u(t)), sign +1 expands (u(t)/u(s)).
    """
    comps = [tuple(c) for c in components]
    return DiagonalFamily(
        tuple(CosineExponent(float(c), float(d)) for c, d, _ in comps),
        tuple(int(sg) for _, _, sg in comps),
    )


@dataclass(frozen=True)
class _S:
    a: float

    def __call__(self, t):
        r = np.sqrt(1.0 + (t + self.a) ** 2)
        return np.array([[1.0, (t + self.a) / r], [0.0, 1.0 / r]])


@dataclass(frozen=True)
class _SInv:
    a: float

    def __call__(self, t):
        r = np.sqrt(1.0 + (t + self.a) ** 2)
        return np.array([[1.0, -(t + self.a)], [0.0, r]])


@dataclass(frozen=True)
class _PTilde:
    a: float

    def __call__(self, t):
        return np.array([[1.0, -(t + self.a)], [0.0, 0.0]])


def _ex25_p(t, s):
    return np.exp(-3 * (t - s) - t * np.cos(t) ** 2 + s * np.cos(s) ** 2)


def _ex25_q(t, s):
    return np.exp(-4 * (t - s) + t * np.sin(t) ** 2 - s * np.sin(s) ** 2)


def _ex32_p(t, s):
    return np.exp(-(t - s) - t * np.cos(t) ** 2 + s * np.cos(s) ** 2)


def _ex32_q(t, s):
    return np.exp(s * np.cos(s) ** 2 - t * np.cos(t) ** 2)


def _ex28_p(t, s):
    return np.exp(-(t - s))


def _ex28_q(t, s):
    return np.exp(t - s)


def _resonant(n_terms, start, step, lag=None):
    if lag is None:
        return [(start + step * n, 0.0) for n in range(n_terms)]
    return [(start + step * n + lag, start + step * n) for n in range(n_terms)]


def build(id: str, params: dict | None = None) -> PaperExample:
    params = dict(params or {})
    P = coordinate_projection(2, [0])
    if id == "Ex2_5":
        fam = generalized_cosine_family([(3, 1, -1), (3, 1, +1)])
        facts = (
            Fact("compatibility_feasible", {"M": 1.0, "epsilon": 1.0, "omega": 1e-3}),
            Fact("envelope_feasible", {"side": "P", "N": 1.0, "alpha": 1.0, "nu": 3.0}),
            Fact("envelope_feasible", {"side": "Q", "N": 1.0, "alpha": 1.0, "nu": 4.0}),
            Fact("uniform_witness", {"side": "P", "pairs": _resonant(7, 0.0, np.pi, np.pi / 2),
                                     "min_growth": np.exp(np.pi) - 0.01}),
            Fact("dichotomy", {"expected": True, "uniform": False}),
            Fact("norm_oracle", {}, 1e-12),
        )
        return PaperExample(id, fam, P, facts, _ex25_p, _ex25_q, params)
    if id == "Ex2_6":
        a = float(params.get("a", 1.0))
        if not a > 0:
            raise InvalidParam("Ex2_6 requires a > 0")
        base = generalized_cosine_family([(3, 1, -1), (3, 1, +1)])
        fam = SimilarityFamily(base, _S(a), _SInv(a))
        proj = ProjectionFamily(2, _PTilde(a))
        r2 = float(np.sqrt(2.0))
        facts = (
            Fact("s_norm_bound", {"bound": r2}),
            Fact("envelope_feasible", {"side": "P", "N": r2, "alpha": 1.0, "nu": 3.0}),
            Fact("envelope_feasible", {"side": "Q", "N": r2, "alpha": 1.0, "nu": 4.0}),
            Fact("projection_norm", {"a": a}, 1e-10),
            Fact("dichotomy", {"expected": True}),
        )
        return PaperExample(id, fam, proj, facts, _ex25_p, _ex25_q, {"a": a})
    if id == "Ex2_8":
        fam = generalized_cosine_family([(1, 0, -1), (1, 0, -1)])
        facts = (
            Fact("trend", {"x0": (1.0, 1.0), "horizon": 10.0, "all_decay": True, "q_grows": False}),
            Fact("nonuniform_witness", {"side": "Q", "pairs": _resonant(7, 0.0, np.pi)}),
            Fact("dichotomy", {"expected": False}),
            Fact("norm_oracle", {}, 1e-12),
        )
        return PaperExample(id, fam, P, facts, _ex28_p, _ex28_q, params)
    if id == "Ex3_2":
        fam = generalized_cosine_family([(1, 1, -1), (0, 1, +1)])
        facts = (
            Fact("compatibility_feasible", {"M": 1.0, "epsilon": 1.0, "omega": 1.0}),
            Fact("nonuniform_witness", {"side": "Q", "pairs": _resonant(7, np.pi / 2, 2 * np.pi)}),
            Fact("dichotomy", {"expected": False}),
            Fact("norm_oracle", {}, 1e-12),
        )
        return PaperExample(id, fam, P, facts, _ex32_p, _ex32_q, params)
    raise InvalidParam(f"unknown example id {id!r}; expected one of {IDS}")


def _side(name):
    return Side.P_FORWARD if name == "P" else Side.Q_BACKWARD


def verify_fact(ex: PaperExample, fact: Fact, grid: GridSpec | None = None):
    """Check one known fact with the toolkit; returns (ok, detail)."""
    grid = grid or ex.grid()
    k, p = fact.kind, fact.params
    if k == "compatibility_feasible":
        m = compatibility_margin(ex.family, ex.projection, grid, p["M"], p["epsilon"], p["omega"])
        return m <= fact.tol, {"margin": m}
    if k == "envelope_feasible":
        side = _side(p["side"])
        samples = collect_samples(ex.family, ex.projection, grid).side(side)
        m = envelope_margin(samples, side, p["N"], p["alpha"], p["nu"])
        return m <= fact.tol, {"margin": m}
    if k in ("uniform_witness", "nonuniform_witness"):
        side = _side(p["side"])
        x = np.array([1.0, 0.0]) if side is Side.P_FORWARD else np.array([0.0, 1.0])
        ss = collect_samples(ex.family, ex.projection, p["pairs"], [x], sequence=k)
        rep = refute_envelope(ss.side(side), side, uniform=(k == "uniform_witness"))
        ok = not rep.feasible
        if ok and "min_growth" in p:
            ok = min(rep.growth_factors) >= p["min_growth"]
        return ok, {"growth_factors": rep.growth_factors}
    if k == "dichotomy":
        res = certify_dichotomy(ex.family, ex.projection, grid)
        ok = res.dichotomy == p["expected"]
        if "uniform" in p:
            ok = ok and res.uniform == p["uniform"]
        return ok, {"dichotomy": res.dichotomy, "uniform": res.uniform}
    if k == "norm_oracle":
        worst = 0.0
        for t, s in grid.pairs():
            vp = opnorm(evaluate(ex.family, t, s) @ ex.projection.P(s))
            vq = opnorm(evaluate_UQ_inverse(ex.family, ex.projection, s, t))
            worst = max(worst, abs(np.log(vp) - np.log(ex.p_norm(t, s))),
                        abs(np.log(vq) - np.log(ex.q_norm(t, s))))
        return worst <= fact.tol, {"max_log_error": worst}
    if k == "s_norm_bound":
        worst = max(opnorm(ex.family.S(t)) for t in grid.times())
        return worst <= p["bound"] + fact.tol, {"max_norm": worst}
    if k == "projection_norm":
        a = p["a"]
        errs = [abs(opnorm(ex.projection.P(t)) - np.sqrt(1 + (t + a) ** 2)) for t in grid.times()]
        exceeds = all(opnorm(ex.projection.P(t)) > t + a for t in grid.times())
        return max(errs) <= fact.tol and exceeds, {"max_error": max(errs)}
    if k == "trend":
        rep = check_asymptotics(ex.family, ex.projection, 0.0, p["x0"], p["horizon"])
        ok = rep.all_decay == p["all_decay"] and rep.q_grows == p["q_grows"]
        return ok, {"all_decay": rep.all_decay, "q_grows": rep.q_grows}
    raise ValueError(f"unknown fact kind {k!r}")
