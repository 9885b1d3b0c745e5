"""
Command-line surface of the h-stability laboratory.

Every command writes one output (CSV or JSON) that embeds its run manifest.
Grid points and seeds run in a process pool whose results are collected in
input order, so --jobs never changes the output bytes.
"""

import io
import sys
import json
import math
import time
import logging
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

import firstmoment
import secondmoment
from cache import ResultCache
from errors import HStableError, NoRootsError, ParameterError
from graphs import ModelTag, center_weights, read_graph, triangle
from oracle import enumerate_census
from search import AnnealSchedule, EnergyConstraint, MoveKind, build_graph, restarts, run_seeds, universality_sweep
from specfun import DEFAULT_QUAD, QuadratureSpec
from utils import TOOL_VERSION, get_env_float, get_env_int, get_env_variable, get_tool_info, setup_logging

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    command: str
    params: Dict[str, Any]
    seeds: List[int] = field(default_factory=list)
    tool_version: str = TOOL_VERSION
    convention: str = firstmoment.CALIBRATED_CONVENTION.value
    wall_time: Optional[float] = None

    def embedded(self) -> Dict[str, Any]:
        """Manifest as written into outputs; wall time is logged instead so reruns stay byte-identical."""
        payload = asdict(self)
        payload.pop("wall_time")
        payload.update(get_tool_info())
        return payload


def parallel_map(func: Callable, items: Sequence, jobs: int) -> List:
    """Map in a process pool, returning results in input order."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def to_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_csv(frame: pd.DataFrame, manifest: RunManifest) -> str:
    buffer = io.StringIO()
    buffer.write("# manifest: " + json.dumps(manifest.embedded(), sort_keys=True, default=_json_default) + "\n")
    frame.to_csv(buffer, index=False, float_format="%.12g", lineterminator="\n")
    return buffer.getvalue()


def render(result: Any, manifest: RunManifest, fmt: str, frame: Optional[pd.DataFrame] = None) -> str:
    if fmt == "csv" and frame is not None:
        return to_csv(frame, manifest)
    return to_json({"manifest": manifest.embedded(), "result": result})


def _grid(lo: float, hi: float, points: int) -> List[float]:
    if points < 1:
        raise ParameterError("--points must be positive")
    if points == 1:
        return [float(lo)]
    return [float(v) for v in np.linspace(lo, hi, points)]


def _csv_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma-separated list of numbers, got {text!r}")


def _nan_if_none(value: Optional[float]) -> float:
    return math.nan if value is None else value


# first moment

def _saddle_row(h: float, r: float) -> Dict[str, float]:
    saddle = firstmoment.w_sup(h, r)
    return {"h": h, "w": saddle.value, "x_star": saddle.x_star, "theta_star": saddle.theta_star}


def cmd_threshold(args) -> Any:
    h = firstmoment.h_star()
    saddle = firstmoment.w_sup(h)
    return {
        "h_star": h,
        "convention": firstmoment.CALIBRATED_CONVENTION.value,
        "x_star": saddle.x_star,
        "theta_star": saddle.theta_star,
        "w_at_h_star": saddle.value,
        "residuals": list(saddle.residuals),
    }, None


def cmd_entropy_curve(args) -> Any:
    hs = _grid(args.h_min, args.h_max, args.points)
    rows = parallel_map(partial(_saddle_row, r=args.r), hs, args.jobs)
    frame = pd.DataFrame(rows, columns=["h", "w", "x_star", "theta_star"])
    return frame.to_dict(orient="records"), frame


def cmd_energy_curve(args) -> Any:
    energies = _grid(args.e_min, args.e_max, args.points)
    values = parallel_map(partial(_energy_point, h=args.h), energies, args.jobs)
    frame = pd.DataFrame({"E": energies, "w_prime": values})
    result = {"rows": frame.to_dict(orient="records")}
    try:
        result["E_min"], result["E_max"] = firstmoment.energy_roots(args.h)
    except NoRootsError as e:
        logger.info(f"no energy roots: {e}")
    return result, frame


def _energy_point(E: float, h: float) -> float:
    return firstmoment.w_energy(E, h)


def _fraction_row(h: float) -> Dict[str, float]:
    r = firstmoment.r_bound(h)
    return {"h": h, "r_bound": r, "violating_fraction": 1.0 - r}


def cmd_fraction_bound(args) -> Any:
    hs = _grid(args.h_min, args.h_max, args.points)
    rows = parallel_map(_fraction_row, hs, args.jobs)
    frame = pd.DataFrame(rows, columns=["h", "r_bound", "violating_fraction"])
    return frame.to_dict(orient="records"), frame


def cmd_audit(args) -> Any:
    return firstmoment.calibration_audit().to_dict(), None


# second moment

def _phase_row(h: float, quad: QuadratureSpec, omega_step: float) -> Dict[str, float]:
    try:
        e_min, e_max = firstmoment.energy_roots(h)
    except NoRootsError:
        return {"h": h, "E_min": math.nan, "E_cor": math.nan, "E_max": math.nan}
    e_cor = secondmoment.e_cor(h, quad, omega_step=omega_step)
    return {"h": h, "E_min": e_min, "E_cor": e_cor, "E_max": e_max}


def cmd_phase_diagram(args) -> Any:
    if args.h_grid:
        hs = _csv_floats(args.h_grid)
    else:
        hs = _grid(args.h_min, args.h_max if args.h_max is not None else firstmoment.h_star() - 1e-3, args.points)
    rows = parallel_map(partial(_phase_row, quad=args.quad, omega_step=args.omega_step), hs, args.jobs)
    frame = pd.DataFrame(rows, columns=["h", "E_min", "E_cor", "E_max"])
    result = {"rows": frame.to_dict(orient="records")}
    if args.h_cor:
        result["h_cor"] = secondmoment.h_cor(args.quad, omega_step=args.omega_step)
    return result, frame


def _overlap_row(omega: float, x: float, h: float, quad: QuadratureSpec) -> Dict[str, float]:
    saddle = secondmoment.w_overlap(secondmoment.OverlapQuery(x=x, omega=omega, h=h), quad)
    return {
        "omega": omega,
        "W": saddle.value,
        "t_star": saddle.t_star,
        "theta1": saddle.theta1_star,
        "theta2": saddle.theta2_star,
        "residual": max(abs(r) for r in saddle.residuals),
    }


def cmd_second_moment(args) -> Any:
    if args.auto_xstar or args.x is None:
        x = firstmoment.w_sup(args.h).x_star
    else:
        x = args.x
    limit = 1.0 - secondmoment.OMEGA_CLAMP
    omegas = _grid(-limit, limit, args.omega_points)
    rows = parallel_map(partial(_overlap_row, x=x, h=args.h, quad=args.quad), omegas, args.jobs)
    frame = pd.DataFrame(rows, columns=["omega", "W", "t_star", "theta1", "theta2", "residual"])
    return {"x": x, "rows": frame.to_dict(orient="records")}, frame


# simulation and oracle

def _simulate_seed(seed: int, args) -> Dict[str, Any]:
    g = build_graph(f"{args.model}:{args.interaction}", args.n, args.d, seed)
    if args.center:
        g = center_weights(g)
    constraint = None
    if args.energy_ge is not None:
        constraint = EnergyConstraint("ge", args.energy_ge)
    elif args.energy_le is not None:
        constraint = EnergyConstraint("le", args.energy_le)
    schedule = AnnealSchedule(steps=args.steps, epsilon1=args.epsilon1, objective=args.objective)
    result = restarts(g, args.h, args.restarts, seed, algo=args.algo, schedule=schedule,
                      move_kind=args.move_kind, energy_constraint=constraint)
    rep = result.best_report
    return {
        "seed": seed,
        "objective": result.best_deficit,
        "D": rep.D,
        "D_per_n": rep.D / args.n,
        "N_per_n": rep.N / args.n,
        "T": rep.T,
        "E": rep.E,
        "min_s": rep.min_s,
        "magnetization": int(result.best_sigma.magnetization),
    }


def cmd_simulate(args) -> Any:
    seeds = run_seeds(args.seed, args.seeds)
    args.manifest.seeds = seeds
    rows = parallel_map(partial(_simulate_seed, args=_picklable(args)), seeds, args.jobs)
    frame = pd.DataFrame(rows)
    summary = {
        "mean_D_per_n": float(frame["D_per_n"].mean()),
        "std_D_per_n": float(frame["D_per_n"].std(ddof=1)) if len(frame) > 1 else 0.0,
        "mean_N_per_n": float(frame["N_per_n"].mean()),
        "min_s": float(frame["min_s"].min()),
        "per_seed": rows,
    }
    return summary, frame


def cmd_enumerate(args) -> Any:
    if args.graph_file:
        g = read_graph(args.graph_file)
    elif args.model == "triangle":
        g = triangle(args.interaction, norm_param=args.d)
    else:
        g = build_graph(f"{args.model}:{args.interaction}", args.n, args.d, args.seed)
    census = enumerate_census(g, args.h, restrict_bisections=args.bisections, pairs=args.pairs, jobs=args.jobs)
    return census.to_dict(), None


def cmd_universality(args) -> Any:
    seeds = run_seeds(args.seed, args.seeds)
    args.manifest.seeds = seeds
    schedule = AnnealSchedule(steps=args.steps, epsilon1=args.epsilon1)
    summary, gaps = universality_sweep(args.models.split(","), args.n, _csv_floats(args.d_grid),
                                       _csv_floats(args.h_grid), seeds, schedule, args.jobs)
    return {"summary": summary.to_dict(orient="records"), "gaps": gaps.to_dict(orient="records"),
            "centered": True}, gaps


def _picklable(args) -> argparse.Namespace:
    clean = argparse.Namespace(**vars(args))
    for name in ("func", "manifest", "quad"):
        if hasattr(clean, name):
            delattr(clean, name)
    return clean


COMMANDS = {
    "threshold": cmd_threshold,
    "entropy-curve": cmd_entropy_curve,
    "energy-curve": cmd_energy_curve,
    "phase-diagram": cmd_phase_diagram,
    "second-moment": cmd_second_moment,
    "simulate": cmd_simulate,
    "enumerate": cmd_enumerate,
    "universality": cmd_universality,
    "fraction-bound": cmd_fraction_bound,
    "audit": cmd_audit,
}

# commands whose outputs are reproducible from their parameters alone
CACHEABLE = {"threshold", "entropy-curve", "energy-curve", "phase-diagram", "second-moment",
             "fraction-bound", "audit"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hstable", description="Numerical laboratory for h-stable partitions")
    parser.add_argument("--tol", type=float, default=get_env_float("HSTABLE_TOL", 1.0),
                        help="Quadrature tolerance scale (default: 1.0, env HSTABLE_TOL)")
    parser.add_argument("--seed", type=int, default=0, help="Base RNG seed (default: 0)")
    parser.add_argument("--jobs", type=int, default=get_env_int("HSTABLE_JOBS", 1),
                        help="Worker processes (default: 1, env HSTABLE_JOBS)")
    parser.add_argument("--cache-dir", default=None, help="Result cache directory (env HSTABLE_CACHE_DIR)")
    parser.add_argument("--no-cache", action="store_true", help="Disable the result cache")
    parser.add_argument("--format", choices=["csv", "json"], default="csv", help="Output format (default: csv)")
    parser.add_argument("--log-level", default=get_env_variable("HSTABLE_LOG_LEVEL", "INFO"))
    parser.add_argument("--output", default=None, help="Output file (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("threshold", help="Stability threshold h*")
    sub.add_parser("audit", help="Calibration audit of the first-moment conventions")

    p = sub.add_parser("entropy-curve", help="First-moment density w(h)")
    p.add_argument("--h-min", type=float, default=0.0)
    p.add_argument("--h-max", type=float, default=0.6)
    p.add_argument("--points", type=int, default=61)
    p.add_argument("--r", type=float, default=1.0)

    p = sub.add_parser("energy-curve", help="Energy-resolved first-moment density")
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--e-min", type=float, default=-1.0)
    p.add_argument("--e-max", type=float, default=0.0)
    p.add_argument("--points", type=int, default=201)

    p = sub.add_parser("phase-diagram", help="E_min, E_cor and E_max along h")
    p.add_argument("--h-grid", default=None, help="Comma-separated h values")
    p.add_argument("--h-min", type=float, default=0.0)
    p.add_argument("--h-max", type=float, default=None)
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--omega-step", type=float, default=secondmoment.OMEGA_STEP)
    p.add_argument("--h-cor", action="store_true", help="Also locate the crossing h_cor")

    p = sub.add_parser("second-moment", help="Overlap profile of W at fixed (x, h)")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--x", type=float, default=None)
    p.add_argument("--auto-xstar", action="store_true", help="Use the first-moment maximizer x*(h)")
    p.add_argument("--omega-points", type=int, default=201)

    p = sub.add_parser("fraction-bound", help="Guaranteed violating fraction above h*")
    p.add_argument("--h-min", type=float, default=0.36)
    p.add_argument("--h-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=33)

    for name, helptext in (("simulate", "Deficit minimization on random graphs"),
                           ("enumerate", "Exhaustive census of a small graph")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", default="gnp",
                       choices=[t.value for t in ModelTag] + (["triangle"] if name == "enumerate" else []))
        p.add_argument("--n", type=int, default=16)
        p.add_argument("--d", type=float, default=4.0)
        p.add_argument("--interaction", default="antiferro", choices=["ferro", "antiferro", "spin_glass"])
        p.add_argument("--h", type=float, required=True)

    p = sub.choices["simulate"]
    constraint = p.add_mutually_exclusive_group()
    constraint.add_argument("--energy-ge", type=float, default=None)
    constraint.add_argument("--energy-le", type=float, default=None)
    p.add_argument("--algo", choices=["greedy", "anneal"], default="greedy")
    p.add_argument("--move-kind", choices=[m.value for m in MoveKind], default=MoveKind.SINGLE_FLIP.value)
    p.add_argument("--objective", choices=["deficit", "truncated"], default="deficit")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epsilon1", type=float, default=0.05)
    p.add_argument("--center", action="store_true", help="Center weights before searching")

    p = sub.choices["enumerate"]
    p.add_argument("--graph-file", default=None)
    p.add_argument("--pairs", action="store_true", help="Also build the pair-overlap census")
    p.add_argument("--bisections", action="store_true", help="Restrict to bisections")

    p = sub.add_parser("universality", help="Cross-model comparison of annealed deficits")
    p.add_argument("--models", default="gnp:ferro,gnp:antiferro,gnp:spin_glass,dense_gaussian")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--d-grid", default="16,64,256")
    p.add_argument("--h-grid", default="0.2")
    p.add_argument("--seeds", type=int, default=8)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epsilon1", type=float, default=0.05)
    return parser


def run(args) -> str:
    """Execute a parsed command and return its rendered output."""
    if args.jobs < 1:
        raise ParameterError("--jobs must be at least 1")
    args.quad = DEFAULT_QUAD.scaled(args.tol)
    params = {k: v for k, v in vars(args).items()
              if k not in ("command", "jobs", "cache_dir", "no_cache", "log_level", "output", "quad", "func")}
    args.manifest = RunManifest(command=args.command, params=params)

    cache = ResultCache(args.cache_dir, enabled=not args.no_cache and args.command in CACHEABLE)
    key = cache.make_key(args.command, params, {"quad": asdict(args.quad)}, args.manifest.convention)
    cached = cache.fetch(key)
    if cached is not None:
        logger.info(f"{args.command}: returning cached result {key}")
        return cached

    start = time.perf_counter()
    result, frame = COMMANDS[args.command](args)
    args.manifest.wall_time = time.perf_counter() - start
    logger.info(f"{args.command} finished in {args.manifest.wall_time:.2f}s")

    text = render(result, args.manifest, args.format, frame)
    cache.store(key, text)
    return text


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        text = run(args)
        if args.output:
            with open(args.output, "w", encoding="utf-8") as handle:
                handle.write(text)
        else:
            sys.stdout.write(text)
        return 0
    except HStableError as e:
        logger.error(f"{type(e).__name__}: {e}")
        if e.diagnostics:
            logger.error(f"diagnostics: {json.dumps(e.diagnostics, default=str)}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
