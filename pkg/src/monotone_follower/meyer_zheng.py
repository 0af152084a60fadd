"""Pseudopath (Meyer-Zheng) numerics on grid paths.

A path is identified with its occupation measure under Lebesgue measure plus
a unit mass at the horizon; two paths are close when they are close in that
measure.  On a grid the convergence-in-measure metric becomes

    d(x, y) = sum_i min(1, |x(t_i) - y(t_i)|) dt_{i+1} + min(1, |x(T) - y(T)|).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .costs import ControlPlan
from .errors import DimensionError, TreeError
from .lattice import AdaptedProcess, ScenarioTree, TimeGrid

DICTIONARY_VERSION = "bl-clip-v1"
_THRESHOLDS = np.arange(-16, 17) * 0.25


@dataclass(frozen=True)
class GridPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.steps + 1:
            raise DimensionError("a grid path needs a value at every grid time")
        object.__setattr__(self, "values", v)


def _same_grid(x: GridPath, y: GridPath):
    if x.grid != y.grid:
        raise DimensionError("paths live on different grids; resample first")
    if x.values.shape != y.values.shape:
        raise DimensionError("paths have different dimensions")


def pseudopath_distance(x: GridPath, y: GridPath) -> float:
    _same_grid(x, y)
    gap = np.minimum(1.0, np.linalg.norm(x.values - y.values, axis=1))
    return float(np.sum(gap[:-1] * x.grid.deltas) + gap[-1])


def sup_distance(x: GridPath, y: GridPath) -> float:
    _same_grid(x, y)
    return float(np.max(np.linalg.norm(x.values - y.values, axis=1)))


def resample_path(x: GridPath, target: TimeGrid) -> GridPath:
    """Right-continuous step interpolation onto ``target``."""
    if x.grid.horizon != target.horizon:
        raise DimensionError("source and target horizons differ")
    src = x.grid.times
    idx = np.searchsorted(src, target.times, side="right") - 1
    return GridPath(target, x.values[idx])


def control_paths(tree: ScenarioTree, plan: ControlPlan, grid: TimeGrid,
                  rate: Optional[float] = None) -> list[GridPath]:
    """Embed a plan's scenario paths into continuous time, sampled on ``grid``.

    Without ``rate`` each increment is a jump at its node time (right-
    continuous steps).  With ``rate = n`` every increment is realised as the
    latest possible ramp of slope ``n`` ending at its node time, which is an
    n-Lipschitz path through the same grid values.
    """
    if grid.horizon != tree.grid.horizon:
        raise DimensionError("grid horizon differs from the tree's")
    coarse = tree.grid.times
    s = grid.times
    # index of the coarse interval (t_{i-1}, t_i] containing s; 0 for s = 0
    idx = np.searchsorted(coarse, s - 1e-12 * coarse[-1], side="left")
    idx = np.clip(idx, 0, tree.steps)
    levels = plan.path_levels()
    incs = plan.path_increments()
    out = []
    for j in range(levels.shape[0]):
        Aj = levels[j]
        if rate is None:
            step_idx = np.searchsorted(coarse, s + 1e-12 * coarse[-1], side="right") - 1
            vals = Aj[step_idx]
        else:
            end = Aj[idx]
            dA = incs[j][idx]
            lag = (coarse[idx] - s)[:, None]
            vals = end - np.minimum(dA, rate * np.maximum(lag, 0.0))
            vals[idx == 0] = Aj[0]
        out.append(GridPath(grid, vals))
    return out


def ladder_distances(tree: ScenarioTree, capped: ControlPlan, n: float, singular: ControlPlan,
                     resolution: int, previous=None):
    """Worst-case (over scenarios) pseudopath and sup distances for a ladder rung."""
    fine = TimeGrid.uniform(resolution, tree.grid.horizon)
    xs = control_paths(tree, capped, fine, rate=n)
    ys = control_paths(tree, singular, fine)
    pp = max(pseudopath_distance(x, y) for x, y in zip(xs, ys))
    sup = max(sup_distance(x, y) for x, y in zip(xs, ys))
    pp_prev = math.nan
    if previous is not None:
        zs = control_paths(tree, previous[0], fine, rate=previous[1])
        pp_prev = max(pseudopath_distance(x, z) for x, z in zip(xs, zs))
    return pp, sup, pp_prev


@dataclass
class FunctionalReport:
    integral_gaps: np.ndarray     # (n_functions, n_paths)
    terminal_gaps: np.ndarray     # (n_paths,)
    tolerance: float
    converged: bool


def functional_convergence_check(paths: Sequence[GridPath], limit: GridPath,
                                 test_fns: Sequence[Callable], tolerance: float = 1e-2,
                                 tail: int = 1) -> FunctionalReport:
    """Gaps of int b(s, x_n(s)) ds and of x_n(T) against the limit path.

    Converged when the last ``tail`` entries are within ``tolerance`` for every
    test function and for the terminal value.
    """
    for x in paths:
        _same_grid(x, limit)
    t = limit.grid.times[:-1]
    dt = limit.grid.deltas

    def integral(b, x):
        return float(np.sum(np.asarray(b(t, x.values[:-1]), dtype=float).reshape(-1) * dt))

    gaps = np.array([[abs(integral(b, x) - integral(b, limit)) for x in paths] for b in test_fns])
    term = np.array([float(np.linalg.norm(x.values[-1] - limit.values[-1])) for x in paths])
    tail = max(1, min(tail, len(paths)))
    ok = bool(np.all(gaps[:, -tail:] <= tolerance) and np.all(term[-tail:] <= tolerance))
    return FunctionalReport(gaps, term, tolerance, ok)


def conditional_variation(tree: ScenarioTree, x: AdaptedProcess) -> float:
    """Finest-grid quasimartingale variation, conditioning at the left endpoint:

        sum_j E| E[x_{t_j} - x_{t_{j-1}} | F_{t_{j-1}}] | + E|x_T|
    """
    if x.dim != 1:
        raise DimensionError("conditional variation is computed one component at a time")
    xv = x.values[:, 0]
    p = tree.node_prob
    q = tree.transition_prob
    terms = []
    for v in np.flatnonzero(tree.time_index < tree.steps):
        drift = math.fsum(q[c] * xv[c] for c in tree.children[v]) - xv[v]
        terms.append(p[v] * abs(drift))
    leaves = tree.leaves
    terms.extend(p[leaves] * np.abs(xv[leaves]))
    return math.fsum(terms)


@dataclass
class VariationReport:
    per_process: list       # [member][coordinate]
    supremum: list          # per coordinate
    ceiling: float
    bounded: bool


def tightness_certificate(family, ceiling: float = math.inf) -> VariationReport:
    """Sup over a family of conditional variations, per coordinate.

    ``family`` is a list of ``(tree, [AdaptedProcess, ...])`` with one
    one-dimensional process per coordinate.
    """
    if not family:
        raise ValueError("empty family")
    per = [[conditional_variation(tree, x) for x in coords] for tree, coords in family]
    width = len(per[0])
    if any(len(r) != width for r in per):
        raise DimensionError("family members have different numbers of coordinates")
    sup = [max(r[i] for r in per) for i in range(width)]
    return VariationReport(per, sup, ceiling, all(s <= ceiling for s in sup))


@dataclass(frozen=True)
class WeightedPaths:
    grid: TimeGrid
    values: np.ndarray     # (S, M+1, N)
    weights: np.ndarray    # (S,)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        w = np.asarray(self.weights, dtype=float)
        if v.shape[0] != w.size or v.shape[1] != self.grid.steps + 1:
            raise DimensionError("weights/values/grid disagree")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def from_plan(cls, tree: ScenarioTree, plan: ControlPlan) -> "WeightedPaths":
        return cls(tree.grid, plan.path_levels(), tree.node_prob[tree.leaves])


def _dictionary_values(values: np.ndarray, time_indices) -> np.ndarray:
    """Evaluate the fixed 1-Lipschitz, [0, 1]-valued test dictionary; shape (S, F)."""
    cols = []
    sel = values[:, time_indices, :]                      # (S, m, N)
    clips = np.clip(sel[..., None] - _THRESHOLDS, 0.0, 1.0)  # (S, m, N, C)
    S, m = sel.shape[:2]
    cols.append(clips.reshape(S, -1))
    for a, b in itertools.combinations(range(m), 2):
        cols.append(np.minimum(clips[:, a], clips[:, b]).reshape(S, -1))
        cols.append(np.maximum(clips[:, a], clips[:, b]).reshape(S, -1))
    return np.concatenate(cols, axis=1)


def findim_marginal_distance(samples_a: WeightedPaths, samples_b: WeightedPaths,
                             time_indices: Sequence[int]) -> float:
    """Bounded-Lipschitz distance of finite-dimensional marginals over a fixed dictionary."""
    time_indices = sorted(set(int(i) for i in time_indices))
    if not time_indices:
        raise ValueError("empty time subset")
    M = samples_a.grid.steps
    if samples_a.grid != samples_b.grid:
        raise DimensionError("samples live on different grids")
    if time_indices[0] < 0 or time_indices[-1] != M:
        raise ValueError("time subset must lie on the grid and contain T")
    ea = samples_a.weights @ _dictionary_values(samples_a.values, time_indices)
    eb = samples_b.weights @ _dictionary_values(samples_b.values, time_indices)
    return float(np.max(np.abs(ea - eb)))


def distance_matrix(paths: Sequence[Sequence[GridPath]]) -> np.ndarray:
    """Worst-case pseudopath distance between families of scenario paths."""
    m = len(paths)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = max(pseudopath_distance(x, y) for x, y in zip(paths[i], paths[j]))
    return D
