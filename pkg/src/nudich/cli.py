"""Scenario-driven batch runner.

A scenario is a YAML (or JSON) file::

    schema_version: 1
    system: Ex2_5                 # example id, {example: Ex2_6, params: {a: 1}},
                                  # or {family: {...}, projection: [[...]]}
    grid: {t_max: 20, time_points: 81, direction_seed: 0, extra_directions: 4}
    tasks: [axioms, compatibility, envelope, uniform-test]
    task_params:
      datko: {p: 2, gamma: 2, beta: 1}

Results go to ``report.json`` plus one CSV per curve in the output
directory. Exit codes: 0 all certifications pass, 1 some fail, 2 input
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import examples as ex_mod
from .core import (
    ConstantMatrix,
    GridSpec,
    OdeFamily,
    ProjectionFamily,
    check_asymptotics,
    check_axioms,
    check_compatibility,
    evaluate,
    projection_residual,
)
from .datko import DatkoConfig, QuadraturePolicy, datko_certify
from .envelope import Side, certify_dichotomy, projection_norm_curve
from .errors import (
    CommutationViolation,
    DichotomyError,
    DivergentTail,
    HypothesisViolated,
    InvalidParam,
    NotQuadratic,
    PropagationFailure,
    QuadratureFailure,
    RestrictionNotInvertible,
    SingularRestriction,
)
from .lyapunov import (
    LyapunovEvaluator,
    build_lyapunov,
    canonical_H,
    check_form_conditions,
    check_L1_L2,
    check_lyapunov_inequality,
    polarize_W,
)

SCHEMA_VERSION = 1
TASKS = ("axioms", "compatibility", "envelope", "uniform-test", "datko",
         "lyapunov", "polarize", "asymptotics")
# a task may not appear before any of its prerequisites
PREREQUISITES = {
    "envelope": ("compatibility",),
    "uniform-test": ("envelope",),
    "datko": ("compatibility", "envelope"),
    "lyapunov": ("compatibility", "datko"),
    "polarize": ("lyapunov",),
}
GRID_KEYS = {"t_max", "time_points", "direction_seed", "extra_directions", "anchor_period"}
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
CSV_HEADER = ("series", "abscissa", "value", "error_estimate")
NUMERIC_FAILURES = (DivergentTail, QuadratureFailure, PropagationFailure, SingularRestriction)


class ScenarioError(Exception):
    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


# ---------------------------------------------------------------------------
# parsing and validation


def load_scenario(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioError([f"cannot read scenario: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ScenarioError([f"scenario does not parse: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ScenarioError(["scenario must be a mapping"])
    return data


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_params(name, params, diags):
    if not isinstance(params, dict):
        diags.append(f"task_params.{name} must be a mapping")
        return
    for key in ("p", "gamma", "tail_T"):
        if key in params and not (_is_number(params[key]) and params[key] > 0):
            diags.append(f"task_params.{name}.{key} must be a positive number")
    if "beta" in params and not (_is_number(params["beta"]) and params["beta"] >= 0):
        diags.append(f"task_params.{name}.beta must be a nonnegative number")
    if "K" in params and params["K"] is not None and not (_is_number(params["K"]) and params["K"] >= 1):
        diags.append(f"task_params.{name}.K must be a number >= 1")


def _check_system(system, diags):
    if isinstance(system, str):
        if system not in ex_mod.IDS:
            diags.append(f"unknown example id {system!r}")
        return
    if not isinstance(system, dict):
        diags.append("system must be an example id or a mapping")
        return
    if "example" in system:
        if system["example"] not in ex_mod.IDS:
            diags.append(f"unknown example id {system['example']!r}")
        params = system.get("params", {})
        if not isinstance(params, dict):
            diags.append("system.params must be a mapping")
        elif system["example"] == "Ex2_6" and "a" in params:
            if not (_is_number(params["a"]) and params["a"] > 0):
                diags.append("system.params.a must be a positive number")
        return
    fam, proj = system.get("family"), system.get("projection")
    if not isinstance(fam, dict) or fam.get("kind") not in ("cosine", "ode"):
        diags.append("system.family.kind must be 'cosine' or 'ode'")
        return
    try:
        P = np.array(proj, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError
    except (TypeError, ValueError):
        diags.append("system.projection must be a square matrix")
        return
    n = P.shape[0]
    if fam["kind"] == "cosine":
        comps = fam.get("components")
        ok = isinstance(comps, list) and len(comps) == n and all(
            isinstance(c, list) and len(c) == 3 and all(_is_number(v) for v in c) and c[2] in (-1, 1)
            for c in comps
        )
        if not ok:
            diags.append("system.family.components must list one [c, d, sign] per dimension")
    else:
        try:
            A = np.array(fam.get("matrix"), dtype=float)
            if A.shape != (n, n):
                raise ValueError
        except (TypeError, ValueError):
            diags.append("system.family.matrix must be square and match the projection")


def validate(data: dict) -> list:
    """Schema and dependency-order diagnostics; an empty list means clean."""
    diags = []
    if data.get("schema_version") != SCHEMA_VERSION:
        diags.append(f"schema_version must be {SCHEMA_VERSION}")
    if "system" not in data:
        diags.append("missing 'system'")
    else:
        _check_system(data["system"], diags)
    grid = data.get("grid", {})
    if not isinstance(grid, dict):
        diags.append("grid must be a mapping")
    else:
        for key in set(grid) - GRID_KEYS:
            diags.append(f"unknown grid key {key!r}")
        if "t_max" in grid and not (_is_number(grid["t_max"]) and grid["t_max"] > 0):
            diags.append("grid.t_max must be a positive number")
        for key in ("time_points", "extra_directions", "direction_seed"):
            if key in grid and not (isinstance(grid[key], int) and grid[key] >= 0):
                diags.append(f"grid.{key} must be a nonnegative integer")
    tasks = data.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        diags.append("tasks must be a nonempty list")
        tasks = []
    for name in tasks:
        if name not in TASKS:
            diags.append(f"unknown task {name!r}")
    for i, name in enumerate(tasks):
        for pre in PREREQUISITES.get(name, ()):
            if pre in tasks[i + 1:]:
                diags.append(f"task {name!r} must come after {pre!r}")
    params = data.get("task_params", {})
    if not isinstance(params, dict):
        diags.append("task_params must be a mapping")
    else:
        for name, table in params.items():
            if name not in TASKS:
                diags.append(f"task_params for unknown task {name!r}")
            else:
                _check_params(name, table, diags)
    return diags


# ---------------------------------------------------------------------------
# system construction


@dataclass
class System:
    family: object
    projection: ProjectionFamily
    grid: GridSpec
    label: str


def build_system(data: dict, seed_override: int | None = None) -> System:
    system = data["system"]
    grid_kw = dict(data.get("grid", {}))
    if seed_override is not None:
        grid_kw["direction_seed"] = seed_override
    if isinstance(system, str) or "example" in system:
        eid = system if isinstance(system, str) else system["example"]
        params = {} if isinstance(system, str) else system.get("params", {})
        ex = ex_mod.build(eid, params)
        return System(ex.family, ex.projection, ex.grid(**grid_kw), eid)
    fam = system["family"]
    P = np.array(system["projection"], dtype=float)
    proj = ProjectionFamily(P.shape[0], ConstantMatrix(P))
    if projection_residual(proj, [0.0]) > 1e-10:
        raise InvalidParam("system.projection is not idempotent")
    if fam["kind"] == "cosine":
        family = ex_mod.generalized_cosine_family(fam["components"])
    else:
        family = OdeFamily(ConstantMatrix(np.array(fam["matrix"], dtype=float)), P.shape[0])
    return System(family, proj, GridSpec(**grid_kw), "inline")


# ---------------------------------------------------------------------------
# tasks


@dataclass
class Context:
    system: System
    params: dict
    policy: QuadraturePolicy
    results: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def p(self, task):
        return self.params.get(task, {})


def _fit_dict(fit):
    if fit is None:
        return None
    return {"N": fit.N, "alpha": fit.alpha, "nu": fit.nu, "side": fit.side.value,
            "feasible": fit.feasible, "slack": fit.slack, "n_samples": fit.n_samples}


def _witness_dict(w):
    return {"feasible": w.feasible, "label": w.label,
            "growth_factors": None if w.log_lower_bounds is None else list(w.growth_factors)}


def _compat(ctx):
    if "compatibility" not in ctx.results:
        ctx.results["compatibility"] = check_compatibility(
            ctx.system.family, ctx.system.projection, ctx.system.grid)
    return ctx.results["compatibility"]


def _dichotomy(ctx):
    if "envelope" not in ctx.results:
        ctx.results["envelope"] = certify_dichotomy(
            ctx.system.family, ctx.system.projection, ctx.system.grid,
            nu_min=ctx.p("envelope").get("nu_min", 1e-3))
    return ctx.results["envelope"]


def task_axioms(ctx):
    rep = check_axioms(ctx.system.family, ctx.system.grid)
    return rep.passed, {"identity_residual": rep.identity_residual,
                        "cocycle_residual": rep.cocycle_residual,
                        "continuity_quotient": rep.continuity_quotient, "tolerance": rep.tol}


def task_compatibility(ctx):
    try:
        est = _compat(ctx)
    except (CommutationViolation, RestrictionNotInvertible) as exc:
        return False, {"error": type(exc).__name__, "detail": str(exc)}
    return est.passed, {"M": est.M, "epsilon": est.epsilon, "omega": est.omega,
                        "commutation_residual": est.commutation_residual,
                        "invertibility_residual": est.invertibility_residual,
                        "n_samples": est.n_samples}


def task_envelope(ctx):
    dc = _dichotomy(ctx)
    fam, proj = ctx.system.family, ctx.system.projection
    # ||U_P(t,0) x|| against t for the first direction with a P-component
    ts = ctx.system.grid.times()
    for x in ctx.system.grid.directions(fam.dim):
        if np.linalg.norm(proj.P(0.0) @ x) > 0:
            vals = np.linalg.norm(fam.evaluate_many(ts, 0.0) @ (proj.P(0.0) @ x), axis=1)
            ctx.curves["p_norm"] = [("U_P_norm_from_0", t, v, 0.0) for t, v in zip(ts, vals)]
            break
    ctx.curves["projection_norm"] = [
        ("P_norm", t, v, 0.0) for t, v in projection_norm_curve(proj, ctx.system.grid)]
    return dc.dichotomy, {
        "dichotomy": dc.dichotomy,
        "P": _fit_dict(dc.p_fit),
        "Q": _fit_dict(dc.q_fit),
        "merged": None if dc.merged is None else list(dc.merged),
        "p_witness": _witness_dict(dc.p_witness),
        "q_witness": _witness_dict(dc.q_witness),
        "alpha_gap_ok": dc.alpha_gap_ok,
        "region": dc.region,
    }


def task_uniform(ctx):
    dc = _dichotomy(ctx)
    expect = ctx.p("uniform-test").get("expect")
    ok = True if expect is None else dc.uniform == bool(expect)
    return ok, {"uniform": dc.uniform, "witness": _witness_dict(dc.uniform_witness)}


def _datko_config(ctx, table):
    return DatkoConfig(float(table.get("p", 2.0)), float(table.get("gamma", 1.0)),
                       float(table.get("beta", 0.0)), table.get("K"), ctx.policy)


def task_datko(ctx):
    table = ctx.p("datko")
    cfg = _datko_config(ctx, table)
    sysm = ctx.system
    times = table.get("times")
    eps = table.get("epsilon")
    comp = None if eps is not None else _compat(ctx)
    rep = datko_certify(sysm.family, sysm.projection, sysm.grid, None, cfg,
                        compatibility=comp, epsilon=eps, times=times)
    ctx.results["datko"] = rep
    x0 = sysm.grid.directions(sysm.family.dim)[0]
    ctx.curves["datko"] = [
        ("datko_total", pt.t, pt.D_P + pt.D_Q, pt.error) for pt in rep.per_point if np.allclose(pt.x, x0)
    ]
    return rep.certified, {
        "verdict": rep.verdict, "K_est": rep.K_est, "K": cfg.K, "epsilon": rep.epsilon,
        "hypothesis_ok": rep.hypothesis_ok, "max_error": rep.max_error,
        "n_points": len(rep.per_point), "skipped": rep.skipped,
        "p": cfg.p, "gamma": cfg.gamma, "beta": cfg.beta,
    }


def _evaluator(ctx):
    if "lyapunov_evaluator" not in ctx.results:
        table = ctx.p("lyapunov")
        gamma = float(table.get("gamma", ctx.p("datko").get("gamma", 1.0)))
        grid = ctx.system.grid
        ctx.results["lyapunov_evaluator"] = LyapunovEvaluator(
            ctx.system.family, ctx.system.projection, canonical_H(ctx.system.projection, gamma),
            replace(grid, t_max=min(grid.t_max, float(table.get("t_max", 10.0)))), ctx.policy)
    return ctx.results["lyapunov_evaluator"]


def task_lyapunov(ctx):
    table = ctx.p("lyapunov")
    ev = _evaluator(ctx)
    gamma = ev.H.gamma
    beta = float(table.get("beta", ctx.p("datko").get("beta", 0.0)))
    K = float(table.get("K", 1.0))
    t_max = float(table.get("t_max", 10.0))
    rng = np.random.default_rng(int(table.get("seed", ctx.system.grid.direction_seed)))
    triples = []
    for _ in range(int(table.get("triples", 20))):
        t = rng.uniform(0, t_max)
        triples.append((t, rng.uniform(0, t), rng.standard_normal(ev.family.dim)))
    ineq = check_lyapunov_inequality(ev, triples)
    times = np.linspace(0.0, t_max, int(table.get("check_times", 6)))
    l12 = check_L1_L2(ev, K, gamma, beta, ev.grid, times=times)
    x0 = np.array(table.get("x0", np.ones(ev.family.dim)), dtype=float)
    traj = []
    for t in times:
        v = build_lyapunov(ev, float(t), evaluate(ev.family, float(t), 0.0) @ x0)
        traj.append(("L_along_trajectory", float(t), v.value, v.error))
    ctx.curves["lyapunov"] = traj
    ok = ineq.passed and l12.l1_holds and l12.l2_holds
    return ok, {
        "gamma": gamma, "beta": beta, "K": K,
        "inequality_passed": ineq.passed, "max_residual": ineq.max_residual,
        "max_tolerance": max(r.tolerance for r in ineq.rows),
        "l1_holds": l12.l1_holds, "tightest_K": l12.tightest_K, "l2_holds": l12.l2_holds,
        "membership_excess": ev.membership,
    }


def task_polarize(ctx):
    table = ctx.p("polarize")
    ev = _evaluator(ctx)
    lt = ctx.p("lyapunov")
    K = float(lt.get("K", 1.0))
    beta = float(lt.get("beta", ctx.p("datko").get("beta", 0.0)))
    out, ok = [], True
    dirs = ctx.system.grid.directions(ev.family.dim)
    for t in table.get("times", [0.0, 1.0, 5.0]):
        try:
            W = polarize_W(ev, float(t), held_out=int(table.get("held_out", 16)),
                           tol=float(table.get("tol", 1e-6)))
        except NotQuadratic as exc:
            out.append({"t": float(t), "error": str(exc)})
            ok = False
            continue
        cc = check_form_conditions(W, ctx.system.projection, K, ev.H.gamma, beta, dirs)
        good = W.symmetric and cc.condition_3 and cc.condition_4
        ok = ok and good
        out.append({"t": float(t), "W": W.matrix.tolist(), "consistency_error": W.consistency_error,
                    "symmetric": W.symmetric, "condition_2": cc.condition_2,
                    "condition_3": cc.condition_3, "condition_4": cc.condition_4,
                    "tightest_K": cc.tightest_K})
    return ok, {"forms": out}


def task_asymptotics(ctx):
    table = ctx.p("asymptotics")
    n = ctx.system.family.dim
    rep = check_asymptotics(ctx.system.family, ctx.system.projection, float(table.get("t0", 0.0)),
                            table.get("x0", [1.0] * n), float(table.get("horizon", 10.0)))
    expect = table.get("expect")
    ok = True
    if expect is not None:
        ok = all(getattr(rep, k) == v for k, v in expect.items())
    return ok, {"p_decays": rep.p_decays, "q_grows": rep.q_grows, "q_trivial": rep.q_trivial,
                "all_decay": rep.all_decay, "consistent_with_dichotomy": rep.consistent_with_dichotomy}


RUNNERS = {
    "axioms": task_axioms,
    "compatibility": task_compatibility,
    "envelope": task_envelope,
    "uniform-test": task_uniform,
    "datko": task_datko,
    "lyapunov": task_lyapunov,
    "polarize": task_polarize,
    "asymptotics": task_asymptotics,
}


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, Side):
        return obj.value
    return obj


def write_curves(curves: dict, out_dir: Path) -> list:
    names = []
    for name in sorted(curves):
        with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for series, a, v, e in curves[name]:
                w.writerow([series, repr(float(a)), repr(float(v)), repr(float(e))])
        names.append(f"{name}.csv")
    return names


def run(scenario_path, out_dir, seed_override=None, tolerance_scale=1.0, stream=None) -> int:
    stream = stream or sys.stderr
    try:
        data = load_scenario(scenario_path)
        diags = validate(data)
        if diags:
            raise ScenarioError(diags)
        if not tolerance_scale > 0:
            raise ScenarioError(["--tolerance-scale must be positive"])
        system = build_system(data, seed_override)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"input error: {d}", file=stream)
        return EXIT_INPUT
    except (InvalidParam, ValueError, TypeError) as exc:
        print(f"input error: {exc}", file=stream)
        return EXIT_INPUT

    params = data.get("task_params", {}) or {}
    dt = params.get("datko", {})
    policy = QuadraturePolicy(
        abs_tol=float(dt.get("abs_tol", 1e-13)) * tolerance_scale,
        rel_tol=float(dt.get("rel_tol", 1e-10)) * tolerance_scale,
        tail_T=float(dt.get("tail_T", 10.0)),
    )
    ctx = Context(system, params, policy)
    task_out, code = [], EXIT_OK
    for name in data["tasks"]:
        try:
            ok, result = RUNNERS[name](ctx)
        except NUMERIC_FAILURES as exc:
            print(f"numerical failure in {name}: {type(exc).__name__}: {exc}", file=stream)
            task_out.append({"task": name, "passed": False,
                             "error": type(exc).__name__, "detail": str(exc)})
            code = EXIT_NUMERIC
            break
        except (HypothesisViolated, InvalidParam) as exc:
            print(f"input error in {name}: {exc}", file=stream)
            task_out.append({"task": name, "passed": False,
                             "error": type(exc).__name__, "detail": str(exc)})
            code = EXIT_INPUT
            break
        except DichotomyError as exc:
            task_out.append({"task": name, "passed": False,
                             "error": type(exc).__name__, "detail": str(exc)})
            code = EXIT_FAIL
            continue
        task_out.append({"task": name, "passed": bool(ok), "result": result})
        if not ok:
            print(f"certification failed: {name}", file=stream)
            code = EXIT_FAIL

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve_files = write_curves(ctx.curves, out)
    report = {
        "scenario": data,
        "system": system.label,
        "provenance": {
            "toolkit": "nudich",
            "version": __version__,
            "direction_seed": system.grid.direction_seed,
            "tolerances": {"abs_tol": policy.abs_tol, "rel_tol": policy.rel_tol,
                           "tail_T": policy.tail_T, "tolerance_scale": tolerance_scale},
        },
        "tasks": task_out,
        "curves": curve_files,
        "passed": code == EXIT_OK,
        "exit_code": code,
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def validate_path(scenario_path, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        data = load_scenario(scenario_path)
        diags = validate(data)
    except ScenarioError as exc:
        diags = exc.diagnostics
    for d in diags:
        print(d, file=stream)
    if not diags:
        print("ok", file=stream)
    return EXIT_INPUT if diags else EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nudich", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("scenario")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--validate-only", action="store_true")
    r.add_argument("--seed-override", type=int, default=None)
    r.add_argument("--tolerance-scale", type=float, default=1.0)
    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("scenario")
    args = parser.parse_args(argv)
    if args.command == "validate" or args.validate_only:
        return validate_path(args.scenario)
    return run(args.scenario, args.out, args.seed_override, args.tolerance_scale)


if __name__ == "__main__":
    sys.exit(main())
