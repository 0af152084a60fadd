"""Finite scenario trees for the target process L.

Nodes are numbered slice by slice (time index ascending, then by insertion
order), so every reduction over a slice runs in ascending node id and results
are bit-reproducible.  All quantities are plain numpy arrays indexed by node id.

The initial-jump convention: a control may jump "just before" time 0.  On a
grid this is an explicit slot, stored at the root, charged at price ``f(0)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, TreeError

PROB_TOL = 1e-12
SCHEMA = "monotone-follower/tree/1"


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise TreeError("a time grid needs at least two points")
        if t[0] != 0.0:
            raise TreeError("time grid must start at exactly 0")
        if np.any(np.diff(t) <= 0):
            raise TreeError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, steps: int, horizon: float = 1.0) -> "TimeGrid":
        if steps < 1:
            raise TreeError("steps must be >= 1")
        if not horizon > 0:
            raise TreeError("horizon must be positive")
        return cls(np.arange(steps + 1) / steps * horizon)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def deltas(self) -> np.ndarray:
        """Step sizes; ``deltas[i-1] = t_i - t_{i-1}``."""
        return np.diff(self.times)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


@dataclass(frozen=True)
class PathSample:
    nodes: tuple
    l_values: np.ndarray
    probability: float


class ScenarioTree:
    """Immutable finite filtered probability model for L.

    Parameters
    ----------
    grid : TimeGrid
    parent : sequence of int
        Parent id per node, ``-1`` for the root.
    transition_prob : sequence of float
        Probability of moving from the parent to this node (1 for the root).
    l_values : array (N, d)
    """

    def __init__(self, grid: TimeGrid, parent: Sequence[int],
                 transition_prob: Sequence[float], l_values):
        self.grid = grid
        self.parent = np.asarray(parent, dtype=int)
        self.transition_prob = np.asarray(transition_prob, dtype=float)
        lv = np.asarray(l_values, dtype=float)
        if lv.ndim == 1:
            lv = lv[:, None]
        self.l_values = lv
        n = self.parent.size
        if self.transition_prob.shape != (n,) or lv.shape[0] != n:
            raise TreeError("parent, transition_prob and l_values disagree in length")

        roots = np.flatnonzero(self.parent < 0)
        if roots.size != 1 or roots[0] != 0:
            raise TreeError("exactly one root is required and it must be node 0")
        self.root = 0

        time_index = np.zeros(n, dtype=int)
        children: list[list[int]] = [[] for _ in range(n)]
        for v in range(1, n):
            p = self.parent[v]
            if not 0 <= p < v:
                raise TreeError(f"node {v}: parent {p} must precede it")
            time_index[v] = time_index[p] + 1
            children[p].append(v)
        if np.any(np.diff(time_index) < 0):
            raise TreeError("nodes must be numbered slice by slice")
        self.time_index = time_index
        self.children = tuple(tuple(c) for c in children)

        M = grid.steps
        if time_index.max() != M:
            raise TreeError(f"tree depth {time_index.max()} does not match grid steps {M}")
        for v in range(n):
            if time_index[v] < M:
                if not children[v]:
                    raise TreeError(f"non-terminal node {v} has no children")
                q = self.transition_prob[list(children[v])]
                if np.any(q <= 0):
                    raise TreeError(f"node {v}: transition probabilities must be positive")
                if abs(math.fsum(q) - 1.0) > PROB_TOL:
                    raise TreeError(f"node {v}: transition probabilities sum to {math.fsum(q)!r}")

        prob = np.empty(n)
        prob[0] = 1.0
        for v in range(1, n):
            prob[v] = prob[self.parent[v]] * self.transition_prob[v]
        self.node_prob = prob
        self.slices = tuple(np.flatnonzero(time_index == i) for i in range(M + 1))
        for i, s in enumerate(self.slices):
            if abs(math.fsum(prob[s]) - 1.0) > PROB_TOL:
                raise TreeError(f"slice {i}: probabilities sum to {math.fsum(prob[s])!r}")

        leaves = self.slices[M]
        paths = np.empty((leaves.size, M + 1), dtype=int)
        paths[:, M] = leaves
        for i in range(M - 1, -1, -1):
            paths[:, i] = self.parent[paths[:, i + 1]]
        self.leaves = leaves
        self.paths = paths
        for arr in (self.parent, self.transition_prob, self.l_values, self.node_prob,
                    self.time_index, self.paths):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def d(self) -> int:
        return self.l_values.shape[1]

    @property
    def steps(self) -> int:
        return self.grid.steps

    def node_time(self, v: int) -> float:
        return float(self.grid.times[self.time_index[v]])

    def leaf_prob(self) -> np.ndarray:
        return self.node_prob[self.leaves]

    def path_samples(self) -> list[PathSample]:
        out = []
        for row, leaf in zip(self.paths, self.leaves):
            out.append(PathSample(tuple(int(v) for v in row), self.l_values[row],
                                  float(self.node_prob[leaf])))
        return out

    def descendants_at(self, v: int, index: int) -> np.ndarray:
        """Ids of descendants of ``v`` at time index ``index`` (ascending)."""
        i = self.time_index[v]
        if index < i:
            raise TreeError("descendant index precedes node")
        current = [v]
        for _ in range(index - i):
            current = [c for u in current for c in self.children[u]]
        return np.asarray(current, dtype=int)

    def backward_average(self, terminal_slice_values: np.ndarray, index: int) -> np.ndarray:
        """Probability-weighted averages of per-node values at ``index``.

        Returns an (N, m) array whose entries at time index ``<= index`` hold
        ``E[x | node]``; later slices are left as NaN.
        """
        vals = np.full((self.n_nodes,) + terminal_slice_values.shape[1:], np.nan)
        vals[self.slices[index]] = terminal_slice_values
        for i in range(index - 1, -1, -1):
            for v in self.slices[i]:
                acc = np.zeros(terminal_slice_values.shape[1:])
                for c in self.children[v]:
                    acc = acc + self.transition_prob[c] * vals[c]
                vals[v] = acc
        return vals

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for v in range(self.n_nodes):
            nodes.append({
                "id": v,
                "time_index": int(self.time_index[v]),
                "parent": None if v == 0 else int(self.parent[v]),
                "children": [{"id": int(c), "prob": float(self.transition_prob[c])}
                             for c in self.children[v]],
                "l": [float(x) for x in self.l_values[v]],
            })
        return {"schema": SCHEMA, "grid": [float(t) for t in self.grid.times], "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioTree":
        if doc.get("schema") != SCHEMA:
            raise TreeError(f"unsupported tree schema {doc.get('schema')!r}")
        grid = TimeGrid(np.asarray(doc["grid"], dtype=float))
        nodes = sorted(doc["nodes"], key=lambda r: r["id"])
        if [r["id"] for r in nodes] != list(range(len(nodes))):
            raise TreeError("node ids must be 0..N-1")
        n = len(nodes)
        parent = [-1] * n
        tp = [1.0] * n
        for r in nodes:
            for ch in r["children"]:
                parent[ch["id"]] = r["id"]
                tp[ch["id"]] = float(ch["prob"])
        for r in nodes:
            expected = -1 if r["parent"] is None else r["parent"]
            if parent[r["id"]] != expected:
                raise TreeError(f"node {r['id']}: parent link disagrees with child lists")
        tree = cls(grid, parent, tp, [r["l"] for r in nodes])
        for r in nodes:
            if tree.time_index[r["id"]] != r["time_index"]:
                raise TreeError(f"node {r['id']}: time index mismatch")
        return tree

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioTree":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class AdaptedProcess:
    tree: ScenarioTree
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.tree.n_nodes:
            raise DimensionError("an adapted process needs one value per node")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def along_paths(self) -> np.ndarray:
        """Values along every root-to-leaf path, shape (leaves, M+1, m)."""
        return self.values[self.tree.paths]


# -- constructors --------------------------------------------------------------

def _from_levels(grid: TimeGrid, levels: list[list[tuple[int, float, np.ndarray]]]) -> ScenarioTree:
    """Assemble a tree from per-slice lists of (parent position in previous slice, prob, L)."""
    parent, tp, lv = [], [], []
    offsets = []
    for i, level in enumerate(levels):
        offsets.append(len(parent))
        for ppos, q, l in level:
            parent.append(-1 if i == 0 else offsets[i - 1] + ppos)
            tp.append(q)
            lv.append(l)
    return ScenarioTree(grid, parent, tp, np.vstack(lv))


def build_binomial_tree(steps: int, volatility: float, drift: float = 0.0,
                        l0=0.0, horizon: float = 1.0) -> ScenarioTree:
    """Non-recombining fair binomial tree with increments +-vol*sqrt(dt) + drift*dt."""
    if steps < 1:
        raise TreeError("steps must be >= 1")
    if not volatility > 0:
        raise TreeError("volatility must be positive")
    grid = TimeGrid.uniform(steps, horizon)
    l0 = np.atleast_1d(np.asarray(l0, dtype=float))
    levels = [[(0, 1.0, l0)]]
    for i in range(1, steps + 1):
        dt = grid.times[i] - grid.times[i - 1]
        up = volatility * math.sqrt(dt) + drift * dt
        down = -volatility * math.sqrt(dt) + drift * dt
        level = []
        for pos, (_, _, l) in enumerate(levels[-1]):
            level.append((pos, 0.5, l + up))
            level.append((pos, 0.5, l + down))
        levels.append(level)
    return _from_levels(grid, levels)


def build_lottery_tree(steps: int, terminal_support: Iterable, horizon: float = 1.0) -> ScenarioTree:
    """L = 0 until the last step, then a single branching into ``terminal_support``.

    ``terminal_support`` is a sequence of ``(value, probability)`` pairs.
    """
    support = [(np.atleast_1d(np.asarray(v, dtype=float)), float(p)) for v, p in terminal_support]
    if not support:
        raise TreeError("terminal support is empty")
    if any(p <= 0 for _, p in support):
        raise TreeError("lottery probabilities must be positive")
    total = math.fsum(p for _, p in support)
    if abs(total - 1.0) > PROB_TOL:
        raise TreeError(f"lottery probabilities sum to {total!r}")
    grid = TimeGrid.uniform(steps, horizon)
    zero = np.zeros_like(support[0][0])
    levels = [[(0, 1.0, zero)]]
    for _ in range(1, steps):
        levels.append([(0, 1.0, zero)])
    levels.append([(0, p, v) for v, p in support])
    return _from_levels(grid, levels)


def build_ray_tree(steps: int) -> ScenarioTree:
    """Two rays ``L_t = t * ell``, ``ell`` in {0, 1} with probability 1/2, horizon 1.

    The branching happens at the first grid time after 0.
    """
    if steps < 1:
        raise TreeError("steps must be >= 1")
    grid = TimeGrid.uniform(steps, 1.0)
    levels = [[(0, 1.0, np.zeros(1))]]
    for i in range(1, steps + 1):
        t = grid.times[i]
        if i == 1:
            levels.append([(0, 0.5, np.array([0.0])), (0, 0.5, np.array([t]))])
        else:
            levels.append([(0, 1.0, np.array([0.0])), (1, 1.0, np.array([t]))])
    return _from_levels(grid, levels)


def build_random_tree(steps: int, max_branching: int = 3, d: int = 1, seed: int = 0,
                      horizon: float = 1.0, scale: float = 1.0) -> ScenarioTree:
    """Random tree: 1..max_branching children per node, Dirichlet transitions, Gaussian L steps."""
    if steps < 1 or max_branching < 1:
        raise TreeError("steps and max_branching must be >= 1")
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(steps, horizon)
    levels = [[(0, 1.0, np.zeros(d))]]
    for i in range(1, steps + 1):
        dt = grid.times[i] - grid.times[i - 1]
        level = []
        for pos, (_, _, l) in enumerate(levels[-1]):
            b = int(rng.integers(1, max_branching + 1))
            q = rng.dirichlet(np.ones(b)) if b > 1 else np.ones(1)
            q = np.maximum(q, 1e-3)
            q = q / q.sum()
            q[-1] = 1.0 - math.fsum(q[:-1])
            for qc in q:
                level.append((pos, float(qc), l + scale * math.sqrt(dt) * rng.standard_normal(d)))
        levels.append(level)
    return _from_levels(grid, levels)


# -- operations ---------------------------------------------------------------

def conditional_expectation(tree: ScenarioTree, x: AdaptedProcess,
                            from_index: int, to_index: int) -> AdaptedProcess:
    """E[x_{t_to} | F_{t_from}] by backward induction.

    The returned process holds the conditional expectation at every node of
    time index ``<= to_index`` (the slice ``from_index`` is the requested
    one); nodes after ``to_index`` carry the value of their ancestor at
    ``to_index``, which is what conditioning on a finer sigma-algebra gives.
    """
    M = tree.steps
    if not (0 <= from_index <= to_index <= M):
        raise TreeError(f"indices out of range: from={from_index}, to={to_index}, M={M}")
    if x.tree is not tree:
        raise TreeError("process lives on a different tree")
    vals = tree.backward_average(x.values[tree.slices[to_index]], to_index)
    for i in range(to_index + 1, M + 1):
        s = tree.slices[i]
        vals[s] = vals[tree.parent[s]]
    return AdaptedProcess(tree, vals)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a (times, k) array")
    return a


def stieltjes_integral(grid: TimeGrid, integrand, increments) -> float:
    """Integral over [0, T] of ``integrand`` against ``dA`` with an initial jump.

    ``increments[0]`` is the jump just before time 0 (priced at
    ``integrand[0]``) and ``increments[i]`` for ``i >= 1`` is the increment
    occurring at ``t_i``.  Both arrays have ``grid.steps + 1`` rows.
    """
    f = _as_matrix(integrand, "integrand")
    dA = _as_matrix(increments, "increments")
    n = grid.steps + 1
    if f.shape[0] != n or dA.shape[0] != n or f.shape[1] != dA.shape[1]:
        raise DimensionError(f"expected ({n}, k) arrays, got {f.shape} and {dA.shape}")
    return float(np.sum(f * dA))
