"""
Exhaustive and Monte Carlo ground truth on small instances.

Configurations are visited in Gray-code order so consecutive states differ by
one flip and the cached local fields update in O(degree). Since every
functional is invariant under the global flip sigma -> -sigma, only states
with the last spin fixed to +1 are visited and every count is doubled.
"""

import math
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import OracleSizeError, ParameterError
from graphs import WeightedGraph, gen, make_rng
from search import AnnealSchedule, MoveKind, anneal, restarts
from stability import SpinConfig, cut_size, deficit, report

logger = logging.getLogger(__name__)

MAX_N = 24
MAX_N_PAIRS = 20
MAX_N_MONTE_CARLO = 20
# deficits closer than this count as ties for the argmin
ARGMIN_TOL = 1e-9


def to_gray_code(x: int) -> int:
    """Convert a counter index to its Gray code."""
    return (x >> 1) ^ x


def gray_flips(num_bits: int) -> Iterator[int]:
    """Bit flipped at each step of the Gray sequence 1 .. 2^num_bits - 1."""
    last = 0
    for i in range(1, 2 ** num_bits):
        value = to_gray_code(i)
        yield (value ^ last).bit_length() - 1
        last = value


@dataclass
class OracleCensus:
    n: int
    h: float
    restrict_bisections: bool = False
    total: int = 0
    histogram: Counter = field(default_factory=Counter)          # (cut, N) -> count
    X0_by_cut: Counter = field(default_factory=Counter)          # cut -> fully stable bisections
    pair_overlap_hist: Optional[Counter] = None                  # sum sigma sigma' -> ordered pairs
    D_min: float = math.inf
    N_max: int = 0
    argmin: Optional[List[int]] = None

    @property
    def X_by_count(self) -> Dict[int, int]:
        """k -> number of configurations with at least k stable vertices."""
        per_count = Counter()
        for (_, stable), count in self.histogram.items():
            per_count[stable] += count
        running, out = 0, {}
        for k in range(self.n, -1, -1):
            running += per_count.get(k, 0)
            out[k] = running
        return out

    def X_by_r(self, r: float) -> int:
        """Configurations with at least r*n h-stable vertices."""
        k = max(0, math.ceil(r * self.n - 1e-12))
        return self.X_by_count.get(k, 0)

    def offer(self, d: float, spins: List[int]):
        """Keep the smaller deficit; ties go to the lexicographically smallest of sigma and -sigma."""
        candidate = min(list(spins), [-s for s in spins])
        if d < self.D_min - ARGMIN_TOL or (
            d <= self.D_min + ARGMIN_TOL and (self.argmin is None or candidate < self.argmin)
        ):
            self.D_min, self.argmin = d, candidate

    def merge(self, other: "OracleCensus") -> "OracleCensus":
        self.total += other.total
        self.histogram.update(other.histogram)
        self.X0_by_cut.update(other.X0_by_cut)
        if other.argmin is not None:
            self.offer(other.D_min, other.argmin)
        self.N_max = max(self.N_max, other.N_max)
        return self

    def to_dict(self) -> Dict:
        """JSON form with explicit integer keys for every histogram."""
        return {
            "n": self.n,
            "h": self.h,
            "restrict_bisections": self.restrict_bisections,
            "total": self.total,
            "histogram": [{"cut": c, "N": k, "count": v} for (c, k), v in sorted(self.histogram.items())],
            "X_by_count": {str(k): v for k, v in sorted(self.X_by_count.items())},
            "X0_by_cut": {str(k): v for k, v in sorted(self.X0_by_cut.items())},
            "pair_overlap_hist": None if self.pair_overlap_hist is None
            else {str(k): v for k, v in sorted(self.pair_overlap_hist.items())},
            "D_min": self.D_min,
            "N_max": self.N_max,
            "argmin": self.argmin,
        }


def _check_size(n: int, pairs: bool):
    limit = MAX_N_PAIRS if pairs else MAX_N
    if n > limit:
        raise OracleSizeError(f"exhaustive enumeration limited to n <= {limit}, got n={n}")


def _census_block(args) -> Tuple[OracleCensus, List[np.ndarray]]:
    """Census of the states whose top `block_bits` free spins encode `block`."""
    g, h, restrict, block, block_bits, keep_stable = args
    n = g.n
    free = n - 1
    low_bits = free - block_bits

    spins = np.ones(n)
    for b in range(block_bits):
        if (block >> b) & 1:
            spins[low_bits + b] = -1.0
    config = SpinConfig(g, spins)
    census = OracleCensus(n=n, h=h, restrict_bisections=restrict)
    stable_bisections = []
    parity = n % 2

    def visit():
        is_bisection = abs(config.magnetization) <= parity
        if restrict and not is_bisection:
            return
        s = config.stabilities()
        stable = int(np.count_nonzero(s >= h))
        cut = cut_size(config.spins, g)
        # the mirrored state -sigma has identical functionals
        census.total += 2
        census.histogram[(cut, stable)] += 2
        if stable == n and is_bisection:
            census.X0_by_cut[cut] += 2
            if keep_stable:
                stable_bisections.append(config.spins.copy())
        census.N_max = max(census.N_max, stable)
        census.offer(float(np.maximum(h - s, 0.0).sum()), config.spins.astype(int).tolist())

    visit()
    for bit in gray_flips(low_bits):
        config.flip(bit)
        visit()
    return census, stable_bisections


def enumerate_census(g: WeightedGraph, h: float, restrict_bisections: bool = False,
                     pairs: bool = False, jobs: int = 1) -> OracleCensus:
    """Exact census over all 2^n configurations (or all bisections)."""
    _check_size(g.n, pairs)
    free = g.n - 1
    block_bits = min(free, max(0, math.ceil(math.log2(jobs)) + 2)) if jobs > 1 else 0
    tasks = [(g, h, restrict_bisections, b, block_bits, pairs) for b in range(2 ** block_bits)]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_census_block, tasks))
    else:
        parts = [_census_block(task) for task in tasks]

    census = OracleCensus(n=g.n, h=h, restrict_bisections=restrict_bisections)
    stable = []
    for part, found in parts:
        census.merge(part)
        stable.extend(found)

    if census.argmin is not None:
        # exact recomputation replaces the fast running sum
        census.D_min = deficit(census.argmin, g, h)

    if pairs:
        census.pair_overlap_hist = _pair_overlaps(stable)
    logger.info(f"census n={g.n} h={h}: {census.total} states, D_min={census.D_min:.6g}")
    return census


def _pair_overlaps(stable: List[np.ndarray]) -> Counter:
    hist = Counter()
    if not stable:
        return hist
    half = np.array(stable)
    both = np.concatenate([half, -half])
    overlaps = np.rint(both @ both.T).astype(np.int64)
    values, counts = np.unique(overlaps, return_counts=True)
    for value, count in zip(values, counts):
        hist[int(value)] = int(count)
    return hist


def naive_census(g: WeightedGraph, h: float, restrict_bisections: bool = False) -> OracleCensus:
    """Full-recompute enumeration in plain binary order; reference for the Gray-code census."""
    _check_size(g.n, False)
    n = g.n
    census = OracleCensus(n=n, h=h, restrict_bisections=restrict_bisections)
    for code in range(2 ** n):
        spins = np.array([-1.0 if (code >> b) & 1 else 1.0 for b in range(n)])
        is_bisection = abs(spins.sum()) <= n % 2
        if restrict_bisections and not is_bisection:
            continue
        rep = report(spins, g, h)
        census.total += 1
        census.histogram[(rep.cut, rep.N)] += 1
        if rep.N == n and is_bisection:
            census.X0_by_cut[rep.cut] += 1
        census.N_max = max(census.N_max, rep.N)
        census.offer(rep.D, spins.astype(int).tolist())
    return census


@dataclass
class MonteCarloDensity:
    density: float
    stderr: float
    quenched_density: Optional[float]
    nonzero_fraction: float
    counts: List[int]
    all_zero: bool = False

    def to_dict(self) -> Dict:
        return {
            "density": self.density,
            "stderr": self.stderr,
            "quenched_density": self.quenched_density,
            "nonzero_fraction": self.nonzero_fraction,
            "counts": self.counts,
            "all_zero": self.all_zero,
        }


def _stable_counts(model: str, n: int, d: float, h: float, interaction: str,
                   num_graphs: int, seed: int) -> List[int]:
    if n > MAX_N_MONTE_CARLO:
        raise OracleSizeError(f"Monte Carlo censuses limited to n <= {MAX_N_MONTE_CARLO}, got n={n}")
    if num_graphs < 1:
        raise ParameterError("num_graphs must be positive")
    seeds = np.random.SeedSequence(int(seed)).spawn(num_graphs)
    counts = []
    for child in seeds:
        graph_seed = int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
        g = gen(model, n, d, interaction, graph_seed)
        counts.append(enumerate_census(g, h).X_by_r(1.0))
    return counts


def mc_first_moment(model: str, n: int, d: float, h: float, interaction: str,
                    num_graphs: int, seed: int) -> MonteCarloDensity:
    """(1/n) log of the mean fully-stable count over sampled graphs, with a delta-method stderr."""
    counts = _stable_counts(model, n, d, h, interaction, num_graphs, seed)
    return _densities(counts, n)


def mc_quenched_density(model: str, n: int, d: float, h: float, interaction: str,
                        num_graphs: int, seed: int) -> Optional[float]:
    """(1/n) mean of log counts over sampled graphs with a nonzero count; None when every count is 0."""
    return mc_first_moment(model, n, d, h, interaction, num_graphs, seed).quenched_density


def _densities(counts: List[int], n: int) -> MonteCarloDensity:
    values = np.asarray(counts, dtype=float)
    mean = float(values.mean())
    nonzero = values[values > 0]
    quenched = float(np.mean(np.log(nonzero)) / n) if nonzero.size else None
    if mean == 0.0:
        return MonteCarloDensity(density=-math.inf, stderr=math.nan, quenched_density=None,
                                 nonzero_fraction=0.0, counts=list(counts), all_zero=True)
    stderr_mean = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return MonteCarloDensity(
        density=math.log(mean) / n,
        stderr=stderr_mean / (mean * n),
        quenched_density=quenched,
        nonzero_fraction=float(nonzero.size / values.size),
        counts=list(counts),
    )


@dataclass
class SearchVerification:
    D_min: float
    greedy_D: float
    anneal_D: float
    greedy_gap: float
    anneal_gap: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def verify_search(g: WeightedGraph, h: float, runs: int = 200, seed: int = 0,
                  schedule: Optional[AnnealSchedule] = None) -> SearchVerification:
    """Compare the best greedy and annealed deficits against the exact census minimum."""
    if g.n > MAX_N_MONTE_CARLO:
        raise OracleSizeError(f"search verification limited to n <= {MAX_N_MONTE_CARLO}, got n={g.n}")
    census = enumerate_census(g, h)
    greedy = restarts(g, h, runs, seed, algo="greedy", move_kind=MoveKind.SINGLE_FLIP.value)
    schedule = schedule or AnnealSchedule(steps=200 * g.n, move_kind=MoveKind.SINGLE_FLIP.value)
    annealed = anneal(g, h, schedule, seed)
    return SearchVerification(
        D_min=census.D_min,
        greedy_D=greedy.best_deficit,
        anneal_D=annealed.best_deficit,
        greedy_gap=greedy.best_deficit - census.D_min,
        anneal_gap=annealed.best_deficit - census.D_min,
    )


def search_success_rate(num_instances: int, n: int, d: float, h: float, seed: int,
                        model: str = "gnp", interaction: str = "antiferro", runs: int = 200,
                        tol: float = 1e-9) -> Dict:
    """Fraction of seeded instances on which greedy restarts reach the exact D_min."""
    rng = make_rng(seed, 0)
    hits, gaps = 0, []
    for _ in range(num_instances):
        g = gen(model, n, d, interaction, int(rng.integers(2 ** 62)))
        check = verify_search(g, h, runs=runs, seed=int(rng.integers(2 ** 62)))
        gaps.append(check.greedy_gap)
        hits += check.greedy_gap <= tol
    return {"instances": num_instances, "success_rate": hits / num_instances,
            "mean_gap": float(np.mean(gaps)), "max_gap": float(np.max(gaps))}
