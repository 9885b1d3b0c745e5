"""
Weighted random graph ensembles.

Sparse models are stored as edge-slot lists (parallel edges repeated, loops as
i == j); dense models as a packed upper triangle. Centering is kept implicit:
a shift mu is subtracted from every entry of the weight matrix, including
non-edges, without densifying the storage.
"""

import math
import logging
from dataclasses import dataclass, replace, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse

from errors import ParameterError

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, sparse.csr_matrix]


class ModelTag(str, Enum):
    GNP = "gnp"
    GNM = "gnm"
    GNP_LOOPS = "gnp_loops"
    GNM_LOOPS = "gnm_loops"
    CONFIG_MODEL = "config_model"
    DENSE_GAUSSIAN = "dense_gaussian"
    DENSE_BERNOULLI = "dense_bernoulli"

    @property
    def is_dense(self) -> bool:
        return self in (ModelTag.DENSE_GAUSSIAN, ModelTag.DENSE_BERNOULLI)

    @property
    def allows_loops(self) -> bool:
        return self in (ModelTag.GNP_LOOPS, ModelTag.GNM_LOOPS, ModelTag.CONFIG_MODEL)


SPARSE_MODELS = tuple(tag for tag in ModelTag if not tag.is_dense)


class Interaction(str, Enum):
    FERRO = "ferro"
    ANTIFERRO = "antiferro"
    SPIN_GLASS = "spin_glass"
    CUSTOM = "custom"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator for the given seed and stream path."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


# stream ids; each sparse generator draws rows/slots from its own substream
_STREAM_EDGES = 0
_STREAM_LOOPS = 1
_STREAM_WEIGHTS = 2


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """
    Symmetric weighted graph on n vertices.

    Stabilities divide local fields by sqrt(norm_param): d for sparse ensembles, n
    for dense ones. `mu` is the implicit centering shift.
    """

    n: int
    norm_param: float
    model_tag: str
    interaction: str
    edges: Optional[np.ndarray] = None      # (m, 2) int64, i <= j, one row per edge slot
    weights: Optional[np.ndarray] = None    # (m,) float64
    packed: Optional[np.ndarray] = None     # dense upper triangle incl. diagonal, row-major
    mu: float = 0.0
    metadata: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"graph needs n >= 2, got {self.n}")
        if not self.norm_param > 0:
            raise ParameterError(f"norm_param must be positive, got {self.norm_param}")
        if (self.packed is None) == (self.edges is None):
            raise ParameterError("graph needs exactly one of edge list or packed storage")

    @property
    def is_dense(self) -> bool:
        return self.packed is not None

    @property
    def num_slots(self) -> int:
        return 0 if self.edges is None else int(self.edges.shape[0])

    @property
    def has_loops(self) -> bool:
        if self.is_dense:
            return bool(np.any(self.dense_matrix(centered=False).diagonal() != 0.0))
        return bool(np.any(self.edges[:, 0] == self.edges[:, 1]))

    def matrix(self) -> Matrix:
        """Raw (uncentered) symmetric weight matrix; a loop slot adds 2w to the diagonal."""
        if self.is_dense:
            return self.dense_matrix(centered=False)
        return _adjacency(self.n, self.edges, self.weights)

    def dense_matrix(self, centered: bool = True) -> np.ndarray:
        """Full symmetric matrix, with the centering shift applied when requested."""
        if self.is_dense:
            upper = np.zeros((self.n, self.n))
            upper[np.triu_indices(self.n)] = self.packed
            full = upper + np.triu(upper, 1).T
        else:
            full = _adjacency(self.n, self.edges, self.weights).toarray()
        if centered and self.mu != 0.0:
            full = full - self.mu
        return full

    def degrees(self) -> np.ndarray:
        """Endpoint counts per vertex; a loop counts twice."""
        if self.is_dense:
            return np.count_nonzero(self.dense_matrix(centered=False), axis=1)
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def multiplicities(self) -> Dict[Tuple[int, int], int]:
        """Number of slots per unordered vertex pair."""
        if self.is_dense:
            return {}
        pairs, counts = np.unique(self.edges, axis=0, return_counts=True)
        return {(int(i), int(j)): int(c) for (i, j), c in zip(pairs, counts)}

    def ensemble_mean(self) -> Optional[float]:
        """Expected weight of a matrix entry under the generating ensemble, if known."""
        tag = ModelTag(self.model_tag)
        if tag == ModelTag.DENSE_GAUSSIAN:
            return 0.0
        if tag == ModelTag.DENSE_BERNOULLI:
            return 0.5
        if self.interaction == Interaction.CUSTOM.value:
            return None
        sign = {Interaction.FERRO.value: 1.0, Interaction.ANTIFERRO.value: -1.0,
                Interaction.SPIN_GLASS.value: 0.0}[self.interaction]
        n = self.n
        if tag in (ModelTag.GNP, ModelTag.GNP_LOOPS):
            density = self.norm_param / n
        elif tag == ModelTag.GNM:
            density = self.num_slots / (n * (n - 1) / 2)
        elif tag == ModelTag.GNM_LOOPS:
            density = self.num_slots / (n * (n + 1) / 2)
        else:
            # each slot lands on a given off-diagonal pair with probability 2/n^2
            density = 2.0 * self.num_slots / (n * n)
        return sign * density


def _adjacency(n: int, edges: np.ndarray, weights: np.ndarray) -> sparse.csr_matrix:
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    data = np.concatenate([weights, weights])
    # duplicates sum, so parallel slots add up and a loop slot contributes 2w
    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def _check_sparse(n: int, d: float):
    if n < 2:
        raise ParameterError(f"graph needs n >= 2, got {n}")
    if not 0.0 < d < n:
        raise ParameterError(f"average degree must satisfy 0 < d < n, got d={d}, n={n}")


def _slot_count(n: int, d: float) -> int:
    return int(math.floor(d * n / 2.0))


def _unrank_pairs(ranks: np.ndarray, n: int, loops: bool) -> np.ndarray:
    """Map ranks in row-major order of pairs i < j (or i <= j) back to (i, j)."""
    rows = np.arange(n, dtype=np.int64)
    if loops:
        row_start = rows * n - rows * (rows - 1) // 2
        offset = 0
    else:
        row_start = rows * n - rows * (rows + 1) // 2
        offset = 1
    i = np.searchsorted(row_start, ranks, side="right") - 1
    j = ranks - row_start[i] + i + offset
    return np.stack([i, j], axis=1).astype(np.int64)


def _bernoulli_pairs(n: int, p: float, seed: int) -> np.ndarray:
    chunks = []
    for i in range(n - 1):
        rng = make_rng(seed, _STREAM_EDGES, i)
        hits = np.nonzero(rng.random(n - i - 1) < p)[0]
        if hits.size:
            chunks.append(np.stack([np.full(hits.size, i), hits + i + 1], axis=1))
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(chunks).astype(np.int64)


def _interaction_weights(interaction: Interaction, m: int, seed: int) -> np.ndarray:
    if interaction == Interaction.FERRO:
        return np.ones(m)
    if interaction == Interaction.ANTIFERRO:
        return -np.ones(m)
    if interaction == Interaction.SPIN_GLASS:
        rng = make_rng(seed, _STREAM_WEIGHTS)
        return rng.choice(np.array([-1.0, 1.0]), size=m)
    raise ParameterError("custom interactions are only available through read_graph")


def gen(model_tag: Union[str, ModelTag], n: int, d: float,
        interaction: Union[str, Interaction], seed: int) -> WeightedGraph:
    """Sample a sparse graph from the named ensemble."""
    tag = ModelTag(model_tag)
    interaction = Interaction(interaction)
    if tag.is_dense:
        raise ParameterError(f"{tag.value} is a dense ensemble, use gen_dense")
    _check_sparse(n, d)

    if tag in (ModelTag.GNP, ModelTag.GNP_LOOPS):
        edges = _bernoulli_pairs(n, d / n, seed)
        if tag == ModelTag.GNP_LOOPS:
            rng = make_rng(seed, _STREAM_LOOPS)
            loops = np.nonzero(rng.random(n) < d / (2.0 * n))[0]
            edges = np.concatenate([edges, np.stack([loops, loops], axis=1)]).astype(np.int64)
    elif tag in (ModelTag.GNM, ModelTag.GNM_LOOPS):
        loops = tag == ModelTag.GNM_LOOPS
        total = n * (n + 1) // 2 if loops else n * (n - 1) // 2
        m = _slot_count(n, d)
        if m > total:
            raise ParameterError(f"cannot place {m} distinct edges on {n} vertices")
        rng = make_rng(seed, _STREAM_EDGES)
        ranks = np.sort(rng.choice(total, size=m, replace=False))
        edges = _unrank_pairs(ranks.astype(np.int64), n, loops)
    else:
        # balls into bins: both endpoints of every slot uniform and independent
        rng = make_rng(seed, _STREAM_EDGES)
        endpoints = rng.integers(0, n, size=(_slot_count(n, d), 2))
        edges = np.sort(endpoints, axis=1).astype(np.int64)

    weights = _interaction_weights(interaction, edges.shape[0], seed)
    logger.debug(f"generated {tag.value} n={n} d={d} with {edges.shape[0]} edge slots")
    return WeightedGraph(
        n=n, norm_param=float(d), model_tag=tag.value, interaction=interaction.value,
        edges=edges, weights=weights,
        metadata={"seed": int(seed), "gnp_loops_law": "pairs Bernoulli(d/n), loops Bernoulli(d/(2n))"}
        if tag == ModelTag.GNP_LOOPS else {"seed": int(seed)},
    )


def gen_dense(kind: str, n: int, seed: int, loops: bool = False) -> WeightedGraph:
    """Dense symmetric graph with i.i.d. upper-triangle entries; norm_param = n."""
    if n < 2:
        raise ParameterError(f"graph needs n >= 2, got {n}")
    rng = make_rng(seed, _STREAM_WEIGHTS)
    size = n * (n + 1) // 2
    if kind in ("gaussian", ModelTag.DENSE_GAUSSIAN.value):
        tag = ModelTag.DENSE_GAUSSIAN
        packed = rng.standard_normal(size)
    elif kind in ("bernoulli_half", ModelTag.DENSE_BERNOULLI.value):
        tag = ModelTag.DENSE_BERNOULLI
        packed = rng.integers(0, 2, size=size).astype(float)
    else:
        raise ParameterError(f"unknown dense kind {kind!r}")
    if not loops:
        rows = np.arange(n)
        diagonal = rows * n - rows * (rows - 1) // 2
        packed[diagonal] = 0.0
    return WeightedGraph(n=n, norm_param=float(n), model_tag=tag.value,
                         interaction=Interaction.CUSTOM.value if tag == ModelTag.DENSE_GAUSSIAN
                         else Interaction.FERRO.value,
                         packed=packed, metadata={"seed": int(seed)})


def center_weights(g: WeightedGraph, mu: Optional[float] = None) -> WeightedGraph:
    """Subtract the ensemble mean (or the supplied mu) from every matrix entry."""
    if mu is None:
        mu = g.ensemble_mean()
    if mu is None:
        raise ParameterError(f"ensemble mean unknown for {g.model_tag}/{g.interaction}; pass mu")
    return replace(g, mu=g.mu + float(mu))


def scale_weights(g: WeightedGraph, k: float) -> WeightedGraph:
    """Multiply every weight, and the centering shift, by k."""
    if k == 0:
        raise ParameterError("scale factor must be non-zero")
    if g.is_dense:
        return replace(g, packed=g.packed * k, mu=g.mu * k)
    return replace(g, weights=g.weights * k, mu=g.mu * k)


def write_graph(g: WeightedGraph, path: str):
    """Write the TSV edge format: header line, then i<TAB>j<TAB>w per edge slot."""
    if g.is_dense:
        i, j = np.triu_indices(g.n)
        keep = g.packed != 0.0
        frame = pd.DataFrame({"i": i[keep], "j": j[keep], "w": g.packed[keep]})
    else:
        frame = pd.DataFrame({"i": g.edges[:, 0], "j": g.edges[:, 1], "w": g.weights})
    header = f"#n={g.n} norm={g.norm_param:.12g} model={g.model_tag}"
    if g.mu != 0.0:
        header += f" mu={g.mu:.17g}"
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(header + "\n")
        frame.to_csv(handle, sep="\t", header=False, index=False, float_format="%.17g",
                     lineterminator="\n")
    logger.info(f"wrote graph with {len(frame)} lines to {path}")


def _parse_header(line: str) -> Dict[str, str]:
    if not line.startswith("#"):
        raise ParameterError("graph file must start with a '#n=... norm=... model=...' header")
    fields = dict(token.split("=", 1) for token in line[1:].split() if "=" in token)
    for key in ("n", "norm", "model"):
        if key not in fields:
            raise ParameterError(f"graph header lacks {key}=")
    return fields


def read_graph(path: str) -> WeightedGraph:
    """Read a graph written by write_graph; its interaction is reported as custom."""
    with open(path, "r", encoding="utf-8") as handle:
        fields = _parse_header(handle.readline().strip())
        try:
            frame = pd.read_csv(handle, sep="\t", header=None, names=["i", "j", "w"],
                                dtype={"i": np.int64, "j": np.int64, "w": np.float64}, comment="#",
                                float_precision="round_trip")
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame({"i": np.empty(0, dtype=np.int64), "j": np.empty(0, dtype=np.int64),
                                  "w": np.empty(0)})

    n = int(fields["n"])
    tag = ModelTag(fields["model"])
    i = frame["i"].to_numpy()
    j = frame["j"].to_numpy()
    if len(frame) and (i.min() < 0 or j.max() >= n or np.any(i > j)):
        raise ParameterError(f"edge indices must satisfy 0 <= i <= j < {n}")

    common = dict(n=n, norm_param=float(fields["norm"]), model_tag=tag.value,
                  interaction=Interaction.CUSTOM.value, mu=float(fields.get("mu", 0.0)),
                  metadata={"source": path})
    if tag.is_dense:
        packed = np.zeros(n * (n + 1) // 2)
        packed[i * n - i * (i - 1) // 2 + (j - i)] = frame["w"].to_numpy()
        return WeightedGraph(packed=packed, **common)
    return WeightedGraph(edges=np.stack([i, j], axis=1).astype(np.int64),
                         weights=frame["w"].to_numpy(dtype=float), **common)


def triangle(interaction: Union[str, Interaction] = Interaction.ANTIFERRO,
             norm_param: float = 4.0) -> WeightedGraph:
    """Fixed triangle used by hand-checked examples."""
    sign = -1.0 if Interaction(interaction) == Interaction.ANTIFERRO else 1.0
    return from_edges(3, [(0, 1), (0, 2), (1, 2)], [sign] * 3, norm_param=norm_param,
                      interaction=interaction)


def from_edges(n: int, pairs: Sequence[Tuple[int, int]], weights: Sequence[float],
               norm_param: float, model_tag: str = ModelTag.GNM.value,
               interaction: Union[str, Interaction] = Interaction.CUSTOM) -> WeightedGraph:
    """Build a sparse graph from explicit edge slots."""
    edges = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
    return WeightedGraph(n=n, norm_param=float(norm_param), model_tag=model_tag,
                         interaction=Interaction(interaction).value,
                         edges=edges, weights=np.asarray(weights, dtype=float))
