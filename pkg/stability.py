"""
Per-configuration functionals: stability, Hamiltonian, energy, cut and deficits.

With B the (implicitly centered) weight matrix and norm the graph's norm_param:

    s_v = sigma_v (B sigma)_v / sqrt(norm)
    H   = -sigma^T B sigma / (2 sqrt(norm)),  E = H / n
    D   = sum_v (h - s_v)^+,  T = sum_v min((h - s_v)^+, 1)

A loop slot stores 2w on the diagonal of B, so it adds 2w sigma_v to the
local field of v and -w/sqrt(norm) to H.
"""

import math
import logging
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from errors import ParameterError
from graphs import WeightedGraph

logger = logging.getLogger(__name__)


class SpinConfig:
    """Spin vector with cached raw local fields, magnetization and Hamiltonian."""

    def __init__(self, graph: WeightedGraph, spins: Sequence[int]):
        """Initialize SpinConfig with a graph and a +-1 vector."""
        spins = np.asarray(spins, dtype=float)
        if spins.shape != (graph.n,):
            raise ParameterError(f"expected {graph.n} spins, got shape {spins.shape}")
        if not np.all(np.abs(spins) == 1.0):
            raise ParameterError("spins must be +1 or -1")
        self.graph = graph
        self.spins = spins.copy()
        self._matrix = graph.matrix()
        self._sparse = sparse.issparse(self._matrix)
        self._scale = 1.0 / math.sqrt(graph.norm_param)
        self.mu = graph.mu
        self.diagonal = np.asarray(self._matrix.diagonal(), dtype=float) - self.mu
        self.recompute()

    @classmethod
    def random(cls, graph: WeightedGraph, rng: np.random.Generator, bisection: bool = False) -> "SpinConfig":
        """Uniform configuration, or a uniform bisection (|M| = n mod 2)."""
        n = graph.n
        if bisection:
            spins = np.ones(n)
            spins[n // 2:] = -1.0
            if n % 2 and rng.random() < 0.5:
                spins = -spins
            rng.shuffle(spins)
        else:
            spins = rng.choice(np.array([-1.0, 1.0]), size=n)
        return cls(graph, spins)

    def copy(self) -> "SpinConfig":
        clone = object.__new__(SpinConfig)
        clone.__dict__.update(self.__dict__)
        clone.spins = self.spins.copy()
        clone.raw_fields = self.raw_fields.copy()
        return clone

    @property
    def n(self) -> int:
        return self.graph.n

    def recompute(self):
        """Rebuild every cached quantity from the spins."""
        self.raw_fields = np.asarray(self._matrix @ self.spins, dtype=float)
        self.magnetization = int(round(self.spins.sum()))
        self.hamiltonian = -0.5 * self._scale * (
            float(self.spins @ self.raw_fields) - self.mu * self.magnetization ** 2
        )

    def neighbors(self, v: int) -> Tuple[np.ndarray, np.ndarray]:
        """Column v of the raw weight matrix as (indices, values)."""
        if self._sparse:
            start, end = self._matrix.indptr[v], self._matrix.indptr[v + 1]
            return self._matrix.indices[start:end], self._matrix.data[start:end]
        return np.arange(self.n), self._matrix[v]

    def affected(self, v: int) -> np.ndarray:
        """Vertices whose stability changes when v flips."""
        if self._sparse and self.mu == 0.0:
            idx, _ = self.neighbors(v)
            return np.union1d(idx, [v])
        return np.arange(self.n)

    def fields(self, idx: Optional[np.ndarray] = None) -> np.ndarray:
        raw = self.raw_fields if idx is None else self.raw_fields[idx]
        return raw - self.mu * self.magnetization

    def stabilities(self, idx: Optional[np.ndarray] = None) -> np.ndarray:
        spins = self.spins if idx is None else self.spins[idx]
        return spins * self.fields(idx) * self._scale

    def flip(self, v: int):
        """Flip spin v, updating fields, magnetization and H in O(degree)."""
        old = self.spins[v]
        field_v = self.raw_fields[v] - self.mu * self.magnetization
        # H(sigma^v) - H(sigma) = 2 s_v - 2 B_vv / sqrt(norm)
        self.hamiltonian += 2.0 * self._scale * (old * field_v - self.diagonal[v])
        idx, vals = self.neighbors(v)
        self.raw_fields[idx] -= 2.0 * old * vals
        self.spins[v] = -old
        self.magnetization -= int(2 * old)

    def swap(self, u: int, v: int):
        """Exchange a (+,-) pair; magnetization is unchanged."""
        if self.spins[u] == self.spins[v]:
            raise ParameterError(f"swap needs opposite spins at {u} and {v}")
        self.flip(u)
        self.flip(v)

    def is_bisection(self) -> bool:
        return abs(self.magnetization) <= self.n % 2

    def drift(self) -> float:
        """Largest deviation of the cached fields from a full recomputation."""
        exact = np.asarray(self._matrix @ self.spins, dtype=float)
        return float(np.max(np.abs(exact - self.raw_fields)))


Config = Union[SpinConfig, Sequence[int], np.ndarray]


def as_config(sigma: Config, g: WeightedGraph) -> SpinConfig:
    if isinstance(sigma, SpinConfig):
        return sigma
    return SpinConfig(g, sigma)


def stability_of(v: int, sigma: Config, g: WeightedGraph) -> float:
    """s_sigma(v) = sigma_v * local_field_v / sqrt(norm_param)."""
    if not 0 <= v < g.n:
        raise ParameterError(f"vertex {v} outside [0, {g.n})")
    config = as_config(sigma, g)
    return float(config.stabilities(np.array([v]))[0])


def stabilities(sigma: Config, g: WeightedGraph) -> np.ndarray:
    return as_config(sigma, g).stabilities()


def hamiltonian(sigma: Config, g: WeightedGraph) -> float:
    return float(as_config(sigma, g).hamiltonian)


def energy(sigma: Config, g: WeightedGraph) -> float:
    """Normalized energy H / n."""
    return hamiltonian(sigma, g) / g.n


def shortfalls(s: np.ndarray, h: float) -> np.ndarray:
    return np.maximum(h - s, 0.0)


def deficit_of(s: np.ndarray, h: float) -> float:
    """Compensated sum of (h - s_v)^+."""
    return math.fsum(shortfalls(s, h))


def trunc_deficit_of(s: np.ndarray, h: float) -> float:
    return math.fsum(np.minimum(shortfalls(s, h), 1.0))


def deficit(sigma: Config, g: WeightedGraph, h: float) -> float:
    return deficit_of(stabilities(sigma, g), h)


def trunc_deficit(sigma: Config, g: WeightedGraph, h: float) -> float:
    return trunc_deficit_of(stabilities(sigma, g), h)


def deficit_ge_E(sigma: Config, g: WeightedGraph, h: float, E: float) -> float:
    """D + (nE - H)^+, zero iff sigma is h-stable with H >= nE."""
    config = as_config(sigma, g)
    return deficit_of(config.stabilities(), h) + max(g.n * E - config.hamiltonian, 0.0)


def deficit_le_E(sigma: Config, g: WeightedGraph, h: float, E: float) -> float:
    """D + (H - nE)^+, zero iff sigma is h-stable with H <= nE."""
    config = as_config(sigma, g)
    return deficit_of(config.stabilities(), h) + max(config.hamiltonian - g.n * E, 0.0)


def stable_count(s: np.ndarray, h: float) -> int:
    return int(np.count_nonzero(s >= h))


def cut_size(spins: np.ndarray, g: WeightedGraph) -> int:
    """Edge slots (or non-zero dense entries) joining opposite parts."""
    if g.is_dense:
        mask = g.dense_matrix(centered=False) != 0.0
        crossing = np.not_equal.outer(spins, spins)
        return int(np.count_nonzero(np.triu(mask & crossing, 1)))
    return int(np.count_nonzero(spins[g.edges[:, 0]] != spins[g.edges[:, 1]]))


def cut_and_x(sigma: Config, g: WeightedGraph) -> Tuple[int, float]:
    """Cut size and the x solving cut/n = d/4 + x sqrt(d/2)."""
    spins = sigma.spins if isinstance(sigma, SpinConfig) else np.asarray(sigma, dtype=float)
    cut = cut_size(spins, g)
    d = g.norm_param
    return cut, (cut / g.n - d / 4.0) / math.sqrt(d / 2.0)


def violation_bound(sigma: Config, g: WeightedGraph, h: float, h_tilde: float) -> float:
    """Upper bound D(h_tilde) / (h_tilde - h) on the number of vertices with s_v < h."""
    if not h_tilde > h:
        raise ParameterError(f"h_tilde={h_tilde} must exceed h={h}")
    return deficit(sigma, g, h_tilde) / (h_tilde - h)


@dataclass
class StabilityReport:
    n: int
    h: float
    s: np.ndarray
    N: int
    D: float
    T: float
    H: float
    E: float
    cut: int
    x: float
    min_s: float
    violators: int

    def to_dict(self) -> Dict:
        """JSON form; the per-vertex vector is left out."""
        payload = asdict(self)
        payload.pop("s")
        return payload


def report(sigma: Config, g: WeightedGraph, h: float) -> StabilityReport:
    """Every functional of sigma at threshold h in one pass."""
    config = as_config(sigma, g)
    s = config.stabilities()
    cut, x = cut_and_x(config, g)
    N = stable_count(s, h)
    return StabilityReport(
        n=g.n,
        h=float(h),
        s=s,
        N=N,
        D=deficit_of(s, h),
        T=trunc_deficit_of(s, h),
        H=float(config.hamiltonian),
        E=float(config.hamiltonian) / g.n,
        cut=cut,
        x=float(x),
        min_s=float(s.min()),
        violators=g.n - N,
    )
