"""Meeting models: agent count plus symmetric positive pairwise meeting rates.

A :class:`MeetingModel` stores each unordered pair ``i < j`` with a strictly
positive rate exactly once, sorted by ``(i, j)``.  Pairs that never meet are
simply absent.  Generators below build the graph families the simulator and
solver work with; every one of them returns a validated model.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson as _poisson

from .exceptions import InvalidArgument

__all__ = [
    "MeetingModel",
    "GwOffspring",
    "complete_graph",
    "from_edge_list",
    "ring_of_near_cliques",
    "erdos_renyi",
    "torus_power_law",
    "dary_tree",
    "regular_tree",
    "galton_watson_tree",
    "random_regular_graph",
    "is_connected",
    "MAX_VERTICES",
]

MAX_VERTICES = 10**7


@dataclass(frozen=True, eq=False)
class MeetingModel:
    """Symmetric meeting rates on ``n`` agents, stored as a sorted edge list.

    Use :meth:`from_arrays` to build one from unsorted input; the plain
    constructor expects already-normalized arrays and validates them.
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    rate: np.ndarray
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        i = np.ascontiguousarray(self.i, dtype=np.int64)
        j = np.ascontiguousarray(self.j, dtype=np.int64)
        rate = np.ascontiguousarray(self.rate, dtype=np.float64)
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "rate", rate)
        for arr in (i, j, rate):
            arr.setflags(write=False)
        _validate(int(self.n), i, j, rate)

    @classmethod
    def from_arrays(cls, n, i, j, rate=1.0, name="custom") -> "MeetingModel":
        """Normalize to ``i < j``, sort by ``(i, j)`` and validate."""
        i = np.asarray(i, dtype=np.int64).ravel()
        j = np.asarray(j, dtype=np.int64).ravel()
        if i.shape != j.shape:
            raise InvalidArgument("endpoint arrays differ in length")
        rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), i.shape).copy()
        if np.any(i == j):
            raise InvalidArgument("self-pairs are not allowed")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        order = np.lexsort((hi, lo))
        return cls(int(n), lo[order], hi[order], rate[order], name=name)

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(r)) for a, b, r in zip(self.i, self.j, self.rate)]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.i, minlength=self.n) + np.bincount(self.j, minlength=self.n)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in zip(self.i.tolist(), self.j.tolist()):
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def rate_of(self, a: int, b: int) -> float:
        lo, hi = min(a, b), max(a, b)
        start = np.searchsorted(self.i, lo, side="left")
        stop = np.searchsorted(self.i, lo, side="right")
        k = start + np.searchsorted(self.j[start:stop], hi)
        if k < stop and self.j[k] == hi:
            return float(self.rate[k])
        return 0.0

    def all_pairs_positive(self) -> bool:
        return self.n_edges == self.n * (self.n - 1) // 2

    def unit_rates(self) -> bool:
        return bool(np.all(self.rate == 1.0))

    def scaled(self, factor: float) -> "MeetingModel":
        if not factor > 0:
            raise InvalidArgument("scale factor must be positive")
        return MeetingModel(self.n, self.i, self.j, self.rate * factor, name=self.name)

    def __eq__(self, other):
        if not isinstance(other, MeetingModel):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.i, other.i)
            and np.array_equal(self.j, other.j)
            and np.array_equal(self.rate, other.rate)
        )

    __hash__ = None

    def __repr__(self):
        return f"MeetingModel(name={self.name!r}, n={self.n}, edges={self.n_edges})"

    # plain-text edge list ------------------------------------------------

    def to_text(self) -> str:
        lines = [f"n {self.n}"]
        lines.extend(f"{a} {b} {r!r}" for a, b, r in self.edges())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MeetingModel":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows or rows[0][0] != "n" or len(rows[0]) != 2:
            raise InvalidArgument("edge-list file must start with 'n <count>'")
        n = int(rows[0][1])
        body = rows[1:]
        if any(len(r) != 3 for r in body):
            raise InvalidArgument("edge lines must have the form 'i j rate'")
        i = [int(r[0]) for r in body]
        j = [int(r[1]) for r in body]
        rate = [float(r[2]) for r in body]
        return cls.from_arrays(n, i, j, rate, name="file")

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "MeetingModel":
        return cls.from_text(Path(path).read_text())


def _validate(n: int, i: np.ndarray, j: np.ndarray, rate: np.ndarray) -> None:
    if n < 1:
        raise InvalidArgument("a meeting model needs at least one agent")
    if not (i.shape == j.shape == rate.shape) or i.ndim != 1:
        raise InvalidArgument("edge arrays must be one-dimensional and equal length")
    if i.size == 0:
        return
    if i.min() < 0 or j.max() >= n:
        raise InvalidArgument("edge endpoint out of range")
    if np.any(i >= j):
        raise InvalidArgument("edges must satisfy i < j (no self-pairs)")
    if not np.all(np.isfinite(rate)) or np.any(rate <= 0):
        raise InvalidArgument("every stored rate must be finite and strictly positive")
    key = i * n + j
    d = np.diff(key)
    if np.any(d == 0):
        raise InvalidArgument("duplicate pair")
    if np.any(d < 0):
        raise InvalidArgument("edges must be sorted by (i, j)")


@dataclass(frozen=True, eq=False)
class GwOffspring:
    """Offspring law ``pmf[k] = P(k children)`` on ``0..K``."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=np.float64).ravel()
        if pmf.size == 0 or np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise InvalidArgument("pmf entries must be finite and nonnegative")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"pmf sums to {pmf.sum()!r}, not 1")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def poisson(cls, c: float, tail: float = 1e-13) -> "GwOffspring":
        """Poisson(c) truncated at the smallest K whose discarded tail is below ``tail``."""
        if c < 0:
            raise InvalidArgument("Poisson mean must be nonnegative")
        if c == 0:
            return cls(np.array([1.0]))
        K = int(_poisson.isf(tail, c)) + 1
        while _poisson.sf(K, c) >= tail:
            K += 1
        pmf = _poisson.pmf(np.arange(K + 1), c)
        return cls(pmf / pmf.sum())

    @classmethod
    def degenerate(cls, k: int) -> "GwOffspring":
        pmf = np.zeros(k + 1)
        pmf[k] = 1.0
        return cls(pmf)

    @property
    def max_children(self) -> int:
        return self.pmf.size - 1

    def mean(self) -> float:
        return float(np.arange(self.pmf.size) @ self.pmf)

    def pgf(self, x):
        """F(x) = sum_k pmf[k] x**k, evaluated by Horner's rule."""
        return np.polynomial.polynomial.polyval(x, self.pmf)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.pmf.size == 1:
            return np.zeros(size, dtype=np.int64)
        cdf = np.cumsum(self.pmf)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64)


# generators ----------------------------------------------------------------


def complete_graph(n: int, rate: float = 1.0) -> MeetingModel:
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    if not rate > 0:
        raise InvalidArgument("rate must be positive")
    i, j = np.triu_indices(n, k=1)
    return MeetingModel(n, i, j, np.full(i.size, float(rate)), name=f"complete(n={n})")


def from_edge_list(n: int, edges: Iterable[Sequence[int]]) -> MeetingModel:
    """Unit-rate model from an undirected edge list."""
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise InvalidArgument("edge endpoint out of range")
    return MeetingModel.from_arrays(n, pairs[:, 0], pairs[:, 1], 1.0, name="edge-list")


def ring_of_near_cliques(r: int, k: int) -> MeetingModel:
    """``k`` blocks, each the complete graph on ``r`` vertices minus one edge
    ``(a_b, b_b)``, joined in a cycle by the edges ``(b_b, a_{b+1})``.

    Block ``b`` occupies agents ``b*r .. b*r + r - 1`` with ``a_b = b*r`` and
    ``b_b = b*r + 1``.  Every vertex has degree ``r - 1``.
    """
    if r < 3 or k < 2:
        raise InvalidArgument("need r >= 3 and k >= 2")
    li, lj = np.triu_indices(r, k=1)
    keep = ~((li == 0) & (lj == 1))
    li, lj = li[keep], lj[keep]
    offs = np.arange(k) * r
    bi = (offs[:, None] + li[None, :]).ravel()
    bj = (offs[:, None] + lj[None, :]).ravel()
    ring_b = offs + 1
    ring_a = np.roll(offs, -1)
    i = np.concatenate([bi, ring_b])
    j = np.concatenate([bj, ring_a])
    return MeetingModel.from_arrays(k * r, i, j, 1.0, name=f"near-cliques(r={r},k={k})")


def erdos_renyi(n: int, c: float, rng: np.random.Generator) -> MeetingModel:
    """G(n, c/n) with unit rates.

    Draws the edge count from Binomial(C(n,2), c/n) and then a uniform subset
    of pairs of that size, which is the same law as independent coin flips.
    """
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    if c < 0 or c > n:
        raise InvalidArgument("need 0 <= c <= n")
    p = c / n
    n_pairs = n * (n - 1) // 2
    m = int(rng.binomial(n_pairs, p)) if n_pairs else 0
    if m == 0:
        return MeetingModel(n, np.empty(0), np.empty(0), np.empty(0), name=f"er(n={n},c={c})")
    idx = np.sort(rng.choice(n_pairs, size=m, replace=False)).astype(np.int64)
    i, j = _unrank_pairs(n, idx)
    return MeetingModel(n, i, j, np.ones(m), name=f"er(n={n},c={c})")


def _unrank_pairs(n: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # lexicographic rank of (i, j), i < j: row i starts at i*n - i*(i+1)/2
    starts = np.arange(n, dtype=np.int64) * n - np.arange(n, dtype=np.int64) * np.arange(1, n + 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return i.astype(np.int64), j.astype(np.int64)


def torus_power_law(m: int, d: int, alpha: float) -> MeetingModel:
    """All pairs of the discrete torus Z_m^d with rate ``dist ** -alpha``.

    ``dist`` is the Euclidean norm of the shortest wraparound displacement.
    Agents are numbered in row-major order of their coordinates.
    """
    if m < 2 or d not in (1, 2, 3):
        raise InvalidArgument("need m >= 2 and d in {1, 2, 3}")
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    n = m**d
    coords = np.stack(np.unravel_index(np.arange(n), (m,) * d), axis=1)
    i, j = np.triu_indices(n, k=1)
    disp = np.abs(coords[i] - coords[j])
    disp = np.minimum(disp, m - disp)
    dist = np.sqrt((disp.astype(np.float64) ** 2).sum(axis=1))
    return MeetingModel(n, i, j, dist ** (-float(alpha)), name=f"torus(m={m},d={d},alpha={alpha})")


def _tree_from_children(counts_by_level: list[np.ndarray], name: str) -> MeetingModel:
    """Build a breadth-first numbered tree from per-level child counts."""
    parents, children = [], []
    level = np.array([0], dtype=np.int64)
    next_id = 1
    for counts in counts_by_level:
        total = int(counts.sum())
        if total == 0:
            break
        if next_id + total > MAX_VERTICES:
            raise InvalidArgument(f"tree exceeds {MAX_VERTICES} vertices")
        kids = np.arange(next_id, next_id + total, dtype=np.int64)
        parents.append(np.repeat(level, counts))
        children.append(kids)
        next_id += total
        level = kids
    if not parents:
        return MeetingModel(1, np.empty(0), np.empty(0), np.empty(0), name=name)
    i = np.concatenate(parents)
    j = np.concatenate(children)
    # BFS numbering with repeat() keeps parents nondecreasing and children increasing
    return MeetingModel.from_arrays(next_id, i, j, 1.0, name=name)


def _check_tree_size(total: float) -> None:
    if total > MAX_VERTICES:
        raise InvalidArgument(f"tree would have {total:.3g} vertices (> {MAX_VERTICES})")


def dary_tree(d: int, depth: int) -> MeetingModel:
    """Complete d-ary tree truncated at ``depth``; root is agent 0."""
    if d < 1 or depth < 0:
        raise InvalidArgument("need d >= 1 and depth >= 0")
    _check_tree_size(sum(float(d) ** k for k in range(depth + 1)))
    levels, width = [], 1
    for _ in range(depth):
        levels.append(np.full(width, d, dtype=np.int64))
        width *= d
    return _tree_from_children(levels, name=f"dary(d={d},depth={depth})")


def regular_tree(r: int, depth: int) -> MeetingModel:
    """Root with ``r`` children; every other internal vertex has ``r - 1``."""
    if r < 2 or depth < 1:
        raise InvalidArgument("need r >= 2 and depth >= 1")
    _check_tree_size(1 + r * sum(float(r - 1) ** k for k in range(depth)))
    levels = [np.array([r], dtype=np.int64)]
    width = r
    for _ in range(depth - 1):
        levels.append(np.full(width, r - 1, dtype=np.int64))
        width *= r - 1
    return _tree_from_children(levels, name=f"regular-tree(r={r},depth={depth})")


def galton_watson_tree(offspring: GwOffspring, depth: int, rng: np.random.Generator) -> MeetingModel:
    """Galton-Watson tree sampled level by level; vertices at ``depth`` get no children."""
    if depth < 0:
        raise InvalidArgument("depth must be nonnegative")
    levels = []
    width = 1
    for _ in range(depth):
        counts = offspring.sample(rng, width)
        levels.append(counts)
        width = int(counts.sum())
        if width == 0:
            break
        if width > MAX_VERTICES:
            raise InvalidArgument(f"tree exceeds {MAX_VERTICES} vertices")
    return _tree_from_children(levels, name=f"gw(depth={depth})")


def random_regular_graph(n: int, r: int, rng: np.random.Generator, max_restarts: int = 1000) -> MeetingModel:
    """Simple r-regular graph from stub pairing.

    Pairs stubs at random, keeps the pairs that are neither loops nor
    repeated edges, and re-pairs the leftovers.  If the leftovers admit no
    valid pair at all the attempt restarts from scratch.
    """
    if r < 1 or n <= r or (n * r) % 2:
        raise InvalidArgument("need r >= 1, n > r and n*r even")
    for _ in range(max_restarts):
        edges = _pairing_attempt(n, r, rng)
        if edges is not None:
            pairs = np.array(sorted(edges), dtype=np.int64)
            return MeetingModel(n, pairs[:, 0], pairs[:, 1], np.ones(len(pairs)), name=f"rrg(n={n},r={r})")
    raise RuntimeError("random_regular_graph: too many restarts")


def _pairing_attempt(n: int, r: int, rng: np.random.Generator):
    stubs = np.repeat(np.arange(n, dtype=np.int64), r)
    edges: set[tuple[int, int]] = set()
    while stubs.size:
        rng.shuffle(stubs)
        leftovers = []
        for u, v in zip(stubs[0::2].tolist(), stubs[1::2].tolist()):
            e = (u, v) if u < v else (v, u)
            if u == v or e in edges:
                leftovers.append(u)
                leftovers.append(v)
            else:
                edges.add(e)
        if len(leftovers) == stubs.size and not _has_valid_pair(leftovers, edges):
            return None
        stubs = np.array(leftovers, dtype=np.int64)
    return edges


def _has_valid_pair(stubs: list[int], edges: set) -> bool:
    verts = sorted(set(stubs))
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            if (verts[a], verts[b]) not in edges:
                return True
    return False


def is_connected(model: MeetingModel) -> bool:
    if model.n == 1:
        return True
    if model.n_edges < model.n - 1:
        return False
    g = coo_matrix((np.ones(model.n_edges), (model.i, model.j)), shape=(model.n, model.n))
    n_comp, _ = connected_components(g, directed=False)
    return n_comp == 1


def rooted_children(model: MeetingModel, root: int = 0) -> list[list[int]]:
    """Children lists of a tree viewed from ``root``; raises if not a tree."""
    if not 0 <= root < model.n:
        raise InvalidArgument("root out of range")
    if model.n_edges != model.n - 1 or not is_connected(model):
        raise InvalidArgument("model is not a tree")
    adj = model.neighbors()
    children: list[list[int]] = [[] for _ in range(model.n)]
    seen = np.zeros(model.n, dtype=bool)
    seen[root] = True
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                children[v].append(w)
                queue.append(w)
    return children
