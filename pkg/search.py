"""
Heuristic minimization of the deficit functionals.

greedy_descent takes steepest single-flip or pair-swap moves; anneal runs
Metropolis dynamics on the soft-plus Hamiltonian sum_v g(h - s_v) with a
geometric inverse-temperature ramp; restarts and universality_sweep drive
many independent chains.
"""

import math
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from errors import ParameterError
from graphs import ModelTag, WeightedGraph, center_weights, gen, gen_dense, make_rng
from stability import SpinConfig, StabilityReport, report, shortfalls

logger = logging.getLogger(__name__)

MOVE_TOL = 1e-12
_ANNEAL_STREAM = 7
_START_STREAM = 8


class MoveKind(str, Enum):
    SINGLE_FLIP = "single_flip"
    SWAP_PAIR = "swap_pair"


class Objective(str, Enum):
    DEFICIT = "deficit"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class EnergyConstraint:
    """Hinge on the energy gap: 'ge' penalizes H < nE, 'le' penalizes H > nE."""

    direction: str
    E: float

    def __post_init__(self):
        if self.direction not in ("ge", "le"):
            raise ParameterError(f"energy constraint direction must be 'ge' or 'le', got {self.direction!r}")

    def gap(self, H: float, n: int) -> float:
        return n * self.E - H if self.direction == "ge" else H - n * self.E


@dataclass(frozen=True)
class AnnealSchedule:
    rho_start: float = 1.0
    rho_end: float = 200.0
    steps: Optional[int] = None        # proposals; None means 200 per vertex
    epsilon1: float = 0.05
    move_kind: str = MoveKind.SWAP_PAIR.value
    objective: str = Objective.DEFICIT.value
    trajectory_points: int = 1000

    def __post_init__(self):
        if not (self.rho_end >= self.rho_start > 0):
            raise ParameterError("schedule needs rho_end >= rho_start > 0")
        if not self.epsilon1 > 0:
            raise ParameterError("epsilon1 must be positive")
        if self.steps is not None and self.steps < 1:
            raise ParameterError("steps must be positive")
        MoveKind(self.move_kind)
        Objective(self.objective)

    def total_steps(self, n: int) -> int:
        return self.steps if self.steps is not None else 200 * n

    def rho(self, step: int, total: int) -> float:
        if total <= 1:
            return self.rho_end
        return self.rho_start * (self.rho_end / self.rho_start) ** (step / (total - 1))


@dataclass
class SearchResult:
    best_sigma: SpinConfig
    best_deficit: float
    best_report: StabilityReport
    restarts: int = 1
    rng_seed: Optional[int] = None
    algo: str = "greedy"
    trajectory: Optional[pd.DataFrame] = field(default=None, repr=False)

    def to_dict(self) -> Dict:
        return {
            "algo": self.algo,
            "best_deficit": self.best_deficit,
            "restarts": self.restarts,
            "rng_seed": self.rng_seed,
            "report": self.best_report.to_dict(),
        }


def softplus(t, epsilon1: float):
    """g(t) = gamma log(1 + exp(t / gamma)) with gamma = epsilon1 / log 2, so g(0) = epsilon1."""
    gamma = epsilon1 / math.log(2.0)
    return gamma * np.logaddexp(0.0, np.asarray(t, dtype=float) / gamma)


def acceptance(delta: float, rho: float) -> float:
    """Metropolis acceptance probability for an objective change delta."""
    if delta <= 0.0:
        return 1.0
    return math.exp(-rho * delta)


class _FlipDeltas:
    """Deficit change of every single flip, vectorized over the weight matrix."""

    def __init__(self, config: SpinConfig):
        """Initialize _FlipDeltas with the off-diagonal structure of a configuration's graph."""
        graph = config.graph
        self.n = graph.n
        self.scale = 1.0 / math.sqrt(graph.norm_param)
        self.dense = graph.is_dense or graph.mu != 0.0
        if self.dense:
            matrix = graph.dense_matrix(centered=True)
            self.diagonal = matrix.diagonal().copy()
            np.fill_diagonal(matrix, 0.0)
            self.matrix = matrix
        else:
            coo = sparse.coo_matrix(graph.matrix())
            self.diagonal = np.asarray(graph.matrix().diagonal(), dtype=float)
            off = coo.row != coo.col
            self.rows, self.cols, self.vals = coo.row[off], coo.col[off], coo.data[off]

    def __call__(self, config: SpinConfig, h: float) -> np.ndarray:
        s = config.stabilities()
        spins = config.spins
        old = shortfalls(s, h)
        if self.dense:
            moved = s[:, None] - 2.0 * self.scale * np.outer(spins, spins) * self.matrix
            neighbor = (shortfalls(moved, h) - old[:, None]).sum(axis=0)
        else:
            u, v = self.rows, self.cols
            moved = s[u] - 2.0 * self.scale * spins[u] * spins[v] * self.vals
            neighbor = np.bincount(v, weights=shortfalls(moved, h) - old[u], minlength=self.n)
        own = shortfalls(-s + 2.0 * self.scale * self.diagonal, h) - old
        return own + neighbor


def _glauber_finish(config: SpinConfig) -> int:
    """Zero-temperature flips of vertices whose flip lowers H, lowest index first."""
    flips = 0
    scale = 1.0 / math.sqrt(config.graph.norm_param)
    while True:
        # H(sigma^v) - H(sigma) = 2 s_v - 2 B_vv / sqrt(norm)
        gains = 2.0 * config.stabilities() - 2.0 * scale * config.diagonal
        candidates = np.nonzero(gains < -MOVE_TOL)[0]
        if candidates.size == 0:
            return flips
        config.flip(int(candidates[0]))
        flips += 1


def greedy_descent(g: WeightedGraph, h: float, sigma0, move_kind: str = MoveKind.SINGLE_FLIP.value,
                   max_pair_candidates: Optional[int] = None) -> SearchResult:
    """Steepest descent of D(W, h, sigma) with lowest-index tie-breaking."""
    move_kind = MoveKind(move_kind)
    config = (sigma0.copy() if isinstance(sigma0, SpinConfig) else SpinConfig(g, sigma0))
    if move_kind == MoveKind.SWAP_PAIR and not config.is_bisection():
        raise ParameterError("swap_pair descent needs a bisection start")
    deltas = _FlipDeltas(config)
    moves = 0

    while True:
        single = deltas(config, h)
        if move_kind == MoveKind.SINGLE_FLIP:
            v = int(np.argmin(single))
            if single[v] >= -MOVE_TOL:
                break
            config.flip(v)
        else:
            best = _best_swap(config, deltas, single, h, max_pair_candidates)
            if best is None:
                break
            config.swap(*best)
        moves += 1

    if move_kind == MoveKind.SINGLE_FLIP and h <= 0.0:
        # every unstable vertex lowers H when flipped; at the end min_v s_v >= 0 >= h
        moves += _glauber_finish(config)

    final = report(config, g, h)
    logger.debug(f"greedy {move_kind.value} finished after {moves} moves with D={final.D:.6g}")
    return SearchResult(best_sigma=config, best_deficit=final.D, best_report=final, algo="greedy")


def _best_swap(config: SpinConfig, deltas: _FlipDeltas, single: np.ndarray, h: float,
               max_pair_candidates: Optional[int]) -> Optional[Tuple[int, int]]:
    plus = np.nonzero(config.spins > 0)[0]
    minus_mask = config.spins < 0
    if max_pair_candidates is not None and plus.size > max_pair_candidates:
        order = np.lexsort((plus, single[plus]))
        plus = np.sort(plus[order[:max_pair_candidates]])

    best_delta, best_pair = -MOVE_TOL, None
    for u in plus:
        u = int(u)
        config.flip(u)
        follow = deltas(config, h)
        config.flip(u)
        follow = np.where(minus_mask, follow, np.inf)
        v = int(np.argmin(follow))
        total = single[u] + follow[v]
        # strict comparison keeps the lowest (u, v) on ties
        if total < best_delta:
            best_delta, best_pair = total, (u, v)
    return best_pair


def _soft_terms(s: np.ndarray, h: float, schedule: AnnealSchedule) -> float:
    t = h - s
    if schedule.objective == Objective.TRUNCATED.value:
        t = np.minimum(t, 1.0)
    return float(np.sum(softplus(t, schedule.epsilon1)))


def _hard_terms(s: np.ndarray, h: float, schedule: AnnealSchedule) -> float:
    short = shortfalls(s, h)
    if schedule.objective == Objective.TRUNCATED.value:
        short = np.minimum(short, 1.0)
    return float(np.sum(short))


def anneal(g: WeightedGraph, h: float, schedule: AnnealSchedule = AnnealSchedule(), seed: int = 0,
           energy_constraint: Optional[EnergyConstraint] = None, sigma0=None,
           trajectory_path: Optional[str] = None, record_trajectory: bool = False) -> SearchResult:
    """Soft-plus Metropolis annealing; returns the best hard-objective configuration visited."""
    rng = make_rng(seed, _ANNEAL_STREAM)
    swap = schedule.move_kind == MoveKind.SWAP_PAIR.value
    if sigma0 is None:
        config = SpinConfig.random(g, rng, bisection=swap)
    else:
        config = sigma0.copy() if isinstance(sigma0, SpinConfig) else SpinConfig(g, sigma0)
    if swap and not config.is_bisection():
        raise ParameterError("swap_pair annealing needs a bisection start")

    n = g.n
    total = schedule.total_steps(n)
    every = max(1, total // max(1, schedule.trajectory_points))
    eps = schedule.epsilon1
    record = record_trajectory or trajectory_path is not None

    def energy_soft(H: float) -> float:
        if energy_constraint is None:
            return 0.0
        return float(softplus(energy_constraint.gap(H, n), eps))

    def energy_hard(H: float) -> float:
        if energy_constraint is None:
            return 0.0
        return max(energy_constraint.gap(H, n), 0.0)

    s_all = config.stabilities()
    soft = _soft_terms(s_all, h, schedule)
    hard = _hard_terms(s_all, h, schedule)
    best_value = hard + energy_hard(config.hamiltonian)
    best_spins = config.spins.copy()
    rows = []

    for step in range(total):
        rho = schedule.rho(step, total)
        if swap:
            u = int(rng.choice(np.nonzero(config.spins > 0)[0]))
            v = int(rng.choice(np.nonzero(config.spins < 0)[0]))
            idx = np.union1d(config.affected(u), config.affected(v))
        else:
            u = int(rng.integers(n))
            v = None
            idx = config.affected(u)

        old_s = config.stabilities(idx)
        old_H = config.hamiltonian
        if swap:
            config.swap(u, v)
        else:
            config.flip(u)
        new_s = config.stabilities(idx)

        delta_soft = (_soft_terms(new_s, h, schedule) - _soft_terms(old_s, h, schedule)
                      + energy_soft(config.hamiltonian) - energy_soft(old_H))
        if delta_soft <= 0.0 or rng.random() < acceptance(delta_soft, rho):
            soft += delta_soft - (energy_soft(config.hamiltonian) - energy_soft(old_H))
            hard += _hard_terms(new_s, h, schedule) - _hard_terms(old_s, h, schedule)
            value = hard + energy_hard(config.hamiltonian)
            if value < best_value - MOVE_TOL:
                best_value = value
                best_spins = config.spins.copy()
        else:
            if swap:
                config.swap(v, u)
            else:
                config.flip(u)

        if (step + 1) % n == 0:
            # resynchronize the running sums against a full recomputation
            s_all = config.stabilities()
            soft = _soft_terms(s_all, h, schedule)
            hard = _hard_terms(s_all, h, schedule)

        if record and step % every == 0:
            s_all = config.stabilities()
            rows.append({
                "step": step,
                "rho": rho,
                "soft_deficit": soft + energy_soft(config.hamiltonian),
                "hard_deficit": hard + energy_hard(config.hamiltonian),
                "N": int(np.count_nonzero(s_all >= h)),
                "E": config.hamiltonian / n,
            })

    best = SpinConfig(g, best_spins)
    final = report(best, g, h)
    best_deficit = final.T if schedule.objective == Objective.TRUNCATED.value else final.D
    if energy_constraint is not None:
        best_deficit += energy_hard(final.H)

    trajectory = None
    if record:
        trajectory = pd.DataFrame(rows, columns=["step", "rho", "soft_deficit", "hard_deficit", "N", "E"])
    if trajectory_path is not None:
        trajectory.to_csv(trajectory_path, index=False, float_format="%.12g")
        logger.info(f"wrote annealing trajectory to {trajectory_path}")

    logger.debug(f"anneal seed={seed} best objective {best_deficit:.6g} over {total} proposals")
    return SearchResult(best_sigma=best, best_deficit=best_deficit, best_report=final,
                        rng_seed=int(seed), algo="anneal", trajectory=trajectory)


def run_seeds(seed: int, runs: int) -> List[int]:
    """Independent child seeds; the first k of any longer list are the same."""
    children = np.random.SeedSequence(int(seed)).spawn(runs)
    return [int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for child in children]


def _single_run(args) -> SearchResult:
    g, h, algo, run_seed, schedule, move_kind, energy_constraint = args
    if algo == "greedy":
        rng = make_rng(run_seed, _START_STREAM)
        start = SpinConfig.random(g, rng, bisection=move_kind == MoveKind.SWAP_PAIR.value)
        result = greedy_descent(g, h, start, move_kind)
    elif algo == "anneal":
        result = anneal(g, h, replace(schedule, move_kind=move_kind), run_seed, energy_constraint)
    else:
        raise ParameterError(f"unknown search algorithm {algo!r}")
    result.rng_seed = run_seed
    return result


def restarts(g: WeightedGraph, h: float, runs: int, seed: int, algo: str = "greedy",
             schedule: AnnealSchedule = AnnealSchedule(), move_kind: str = MoveKind.SINGLE_FLIP.value,
             energy_constraint: Optional[EnergyConstraint] = None, jobs: int = 1) -> SearchResult:
    """Best of `runs` independent searches, merged by (deficit, seed)."""
    if runs < 1:
        raise ParameterError("restarts needs at least one run")
    tasks = [(g, h, algo, s, schedule, move_kind, energy_constraint) for s in run_seeds(seed, runs)]
    if jobs > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_single_run, tasks))
    else:
        results = [_single_run(task) for task in tasks]
    best = min(results, key=lambda r: (r.best_deficit, r.rng_seed))
    best.restarts = runs
    return best


def parse_model(spec: str) -> Tuple[str, str]:
    """'gnp:antiferro' -> ('gnp', 'antiferro'); the interaction defaults to antiferro."""
    tag, _, interaction = spec.partition(":")
    ModelTag(tag)
    return tag, interaction or "antiferro"


def build_graph(model: str, n: int, d: float, seed: int) -> WeightedGraph:
    tag, interaction = parse_model(model)
    if ModelTag(tag).is_dense:
        kind = "gaussian" if tag == ModelTag.DENSE_GAUSSIAN.value else "bernoulli_half"
        return gen_dense(kind, n, seed)
    return gen(tag, n, d, interaction, seed)


def _universality_cell(args) -> Dict:
    model, n, d, h, seed, schedule = args
    g = center_weights(build_graph(model, n, d, seed))
    result = anneal(g, h, replace(schedule, move_kind=MoveKind.SWAP_PAIR.value), seed)
    return {
        "model": model,
        "d": d,
        "h": h,
        "seed": seed,
        "D_per_n": result.best_report.D / n,
        "N_per_n": result.best_report.N / n,
    }


def universality_sweep(models: Sequence[str], n: int, d_grid: Sequence[float], h_grid: Sequence[float],
                       seeds: Sequence[int], schedule: AnnealSchedule = AnnealSchedule(),
                       jobs: int = 1) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Annealed D/n and N/n on centered bisections per (model, d, h), plus the cross-model gap."""
    for model in models:
        parse_model(model)
    tasks = [(m, n, d, h, s, schedule) for m in models for d in d_grid for h in h_grid for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_universality_cell, tasks))
    else:
        rows = [_universality_cell(task) for task in tasks]

    per_seed = pd.DataFrame(rows)
    summary = (
        per_seed.groupby(["model", "d", "h"], sort=True)
        .agg(mean_D=("D_per_n", "mean"), std_D=("D_per_n", "std"),
             mean_N=("N_per_n", "mean"), std_N=("N_per_n", "std"))
        .reset_index()
    )

    gaps = []
    for (d, h), cell in summary.groupby(["d", "h"], sort=True):
        means = dict(zip(cell["model"], cell["mean_D"]))
        gap = max((abs(means[a] - means[b]) for a, b in combinations(sorted(means), 2)), default=0.0)
        gaps.append({"d": d, "h": h, "max_gap_D": gap})
    return summary, pd.DataFrame(gaps, columns=["d", "h", "max_gap_D"])
