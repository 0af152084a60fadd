"""Projected-gradient solvers for capped and uncapped monotone-follower problems.

The decision vector is the (N, k) array of node increments with the root row
standing for the initial jump.  The uncapped feasible set is the orthant; the
n-capped one is the box ``0 <= x_v <= n * dt_{i(v)}`` with the root fixed at 0.

Steps use the adjoint ``Y`` (the gradient in the metric weighted by node
probabilities) with a Barzilai-Borwein initial step and Armijo backtracking.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .costs import ControlPlan, CostSpec, _expected_cost_x, cumulate, require_convex, uniform_caps
from .errors import MonotoneFollowerError, TreeError
from .lattice import ScenarioTree
from .pontryagin import _adjoint_values, negative_adjoint_integral

REPORT_SCHEMA = "monotone-follower/solve-report/1"
LADDER_SCHEMA = "monotone-follower/ladder/1"


class CoercivityUnverified(MonotoneFollowerError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 10_000
    grad_tolerance: float = 1e-10
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_step: float = 1e8
    seed: int = 0

    def __post_init__(self):
        if not self.grad_tolerance > 0:
            raise ValueError("grad_tolerance must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 1:
            raise ValueError("sufficient_decrease must lie in (0, 1)")
        if self.max_iterations < 0 or not self.initial_step > 0:
            raise ValueError("max_iterations >= 0 and initial_step > 0 required")


@dataclass
class SolveReport:
    value: float
    iterations: int
    kkt_residual: float
    converged: bool
    coercivity_verified: bool
    diverging: bool = False
    message: str = ""
    value_trace: list = field(default_factory=list, repr=False)
    mass_trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "value": self.value,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "converged": self.converged,
            "coercivity_verified": self.coercivity_verified,
            "diverging": self.diverging,
            "message": self.message,
            "value_trace": list(self.value_trace),
            "mass_trace": list(self.mass_trace),
        }


@dataclass
class CoercivityCheck:
    ok: bool
    kappa: Optional[float]
    explanation: str

    def __bool__(self):
        return self.ok


def check_coercivity(spec: CostSpec, tree: ScenarioTree) -> CoercivityCheck:
    """Sufficient test for linear coercivity: f bounded away from zero, or a
    declared linear lower envelope for g."""
    fv = spec.f_at(tree.grid.times)
    fmin = float(np.min(fv))
    declared = spec.f_lower_bound
    if declared is not None and declared > 0 and fmin >= declared:
        return CoercivityCheck(True, declared, f"min f = {fmin!r} >= c = {declared!r}")
    if declared is None and fmin > 0:
        return CoercivityCheck(True, fmin, f"min f over the grid = {fmin!r} > 0")
    if spec.g_linear_growth is not None and spec.g_linear_growth > 0:
        return CoercivityCheck(True, spec.g_linear_growth,
                               f"g dominates {spec.g_linear_growth!r}|a| for large a")
    t_idx, comp = np.unravel_index(int(np.argmin(fv)), fv.shape)
    witness = (f"f component {comp} equals {fmin!r} at t={float(tree.grid.times[t_idx])!r} "
               f"and g carries no linear growth envelope")
    if declared is not None and fmin < declared:
        witness = f"declared lower bound {declared!r} exceeds min f = {fmin!r}"
    return CoercivityCheck(False, None, witness)


# -- core iteration -------------------------------------------------------------

def _residual(x, Y, upper):
    return float(np.max(np.abs(x - np.clip(x - Y, 0.0, upper)), initial=0.0))


def _mass(tree, A):
    return float(np.sum(tree.node_prob[tree.leaves] * np.linalg.norm(A[tree.leaves], axis=1)))


def _projected_gradient(tree: ScenarioTree, spec: CostSpec, x0: np.ndarray, upper: np.ndarray,
                        opts: SolveOptions):
    p = tree.node_prob[:, None]
    x = np.clip(x0, 0.0, upper)
    A = cumulate(tree, x)
    J = _expected_cost_x(spec, tree, x, A)
    Y = _adjoint_values(spec, tree, A)
    values, masses = [J], [_mass(tree, A)]
    alpha = opts.initial_step
    prev = None
    it = 0
    res = _residual(x, Y, upper)
    stalled = False
    while res > opts.grad_tolerance and it < opts.max_iterations:
        if prev is not None:
            s = x - prev[0]
            yv = Y - prev[1]
            sDs = float(np.sum(p * s * s))
            sy = float(np.sum(p * s * yv))
            alpha = sDs / sy if sy > 0 else alpha * 2.0
        alpha = min(max(alpha, 1e-12), opts.max_step)
        while True:
            x_new = np.clip(x - alpha * Y, 0.0, upper)
            d = x_new - x
            pred = float(np.sum(p * Y * d))
            A_new = cumulate(tree, x_new)
            J_new = _expected_cost_x(spec, tree, x_new, A_new)
            if J_new <= J + opts.sufficient_decrease * pred:
                break
            # predicted change below rounding of J: accept unless J rises beyond rounding
            noise = 4 * np.finfo(float).eps * max(1.0, abs(J))
            if -pred <= noise and J_new <= J + noise:
                break
            alpha *= opts.shrink
            if alpha < 1e-30:
                stalled = True
                break
        if stalled:
            break
        prev = (x, Y)
        x, A, J = x_new, A_new, J_new
        Y = _adjoint_values(spec, tree, A)
        values.append(J)
        masses.append(_mass(tree, A))
        it += 1
        res = _residual(x, Y, upper)
    return x, A, J, Y, res, it, values, masses, stalled


def _ray_diverges(tree, spec, x, Y, upper, J) -> bool:
    """Does pushing mass along a node with Y < 0 drive J materially toward 0?"""
    if J <= 0:
        return False
    cand = np.argwhere((Y < 0) & np.isinf(upper))
    if cand.size == 0:
        return False
    t = 100.0 * (1.0 + float(np.max(x)))
    for v, c in cand:
        xt = x.copy()
        xt[v, c] += t
        if _expected_cost_x(spec, tree, xt) < (1 - 1e-3) * J:
            return True
    return False


def _finish(tree, spec, x, J, res, it, values, masses, stalled, opts, coercive, upper, Y, cap=None):
    converged = res <= opts.grad_tolerance
    diverging = False
    msg = "converged" if converged else ("line search stalled" if stalled else "iteration budget exhausted")
    if not coercive:
        diverging = _ray_diverges(tree, spec, x, Y, upper, J)
        if diverging:
            converged = False
            msg = "coercivity waived: cost keeps decreasing along a recession ray; infimum not attained"
    plan = ControlPlan.from_node_increments(tree, x, cap)
    return plan, SolveReport(J, it, res, converged, coercive, diverging, msg, values, masses)


def solve_capped(tree: ScenarioTree, spec: CostSpec, n: float, opts: SolveOptions = SolveOptions(),
                 warm_start: Optional[ControlPlan] = None):
    """Minimise J over plans with 0 <= dA_v <= n * dt_i and no initial jump."""
    if not n > 0:
        raise ValueError("cap n must be positive")
    require_convex(spec, tree)
    caps = uniform_caps(tree, n)
    upper = np.repeat(caps[np.maximum(tree.time_index - 1, 0)][:, None], spec.k, axis=1)
    upper[tree.root] = 0.0
    x0 = np.zeros((tree.n_nodes, spec.k)) if warm_start is None else warm_start.node_increments()
    out = _projected_gradient(tree, spec, x0, upper, opts)
    x, A, J, Y, res, it, values, masses, stalled = out
    return _finish(tree, spec, x, J, res, it, values, masses, stalled, opts, True, upper, Y, caps)


def solve_uncapped(tree: ScenarioTree, spec: CostSpec, opts: SolveOptions = SolveOptions(),
                   waive_coercivity: bool = False, warm_start: Optional[ControlPlan] = None):
    """Minimise J over all adapted nondecreasing plans (initial jump allowed)."""
    require_convex(spec, tree)
    check = check_coercivity(spec, tree)
    if not check.ok and not waive_coercivity:
        raise CoercivityUnverified(f"coercivity unverified: {check.explanation}")
    upper = np.full((tree.n_nodes, spec.k), np.inf)
    x0 = np.zeros((tree.n_nodes, spec.k)) if warm_start is None else warm_start.node_increments()
    out = _projected_gradient(tree, spec, x0, upper, opts)
    x, A, J, Y, res, it, values, masses, stalled = out
    return _finish(tree, spec, x, J, res, it, values, masses, stalled, opts, check.ok, upper, Y)


# -- ladder -----------------------------------------------------------------------

@dataclass
class LadderRung:
    n: float
    plan: ControlPlan
    report: SolveReport
    neg_adjoint_integral: float
    pp_distance: float = math.nan        # to the uncapped optimizer
    sup_distance: float = math.nan
    pp_distance_prev: float = math.nan   # to the previous rung

    @property
    def value(self) -> float:
        return self.report.value


@dataclass
class LadderReport:
    caps: list
    values: list
    uncapped_value: float
    rungs: list
    uncapped_plan: ControlPlan
    uncapped_report: SolveReport
    monotone: bool
    resolution: int

    @property
    def pseudopath_gaps(self) -> list:
        return [r.pp_distance for r in self.rungs]

    @property
    def final_gap(self) -> float:
        return self.values[-1] - self.uncapped_value

    def rows(self) -> list[dict]:
        return [{
            "n": r.n,
            "V_n": r.value,
            "gap_to_V": r.value - self.uncapped_value,
            "pp_distance": r.pp_distance,
            "sup_distance": r.sup_distance,
            "neg_adjoint_integral": r.neg_adjoint_integral,
            "iterations": r.report.iterations,
        } for r in self.rungs]

    def to_dict(self) -> dict:
        return {
            "schema": LADDER_SCHEMA,
            "caps": list(self.caps),
            "values": list(self.values),
            "uncapped_value": self.uncapped_value,
            "monotone": self.monotone,
            "resolution": self.resolution,
            "pp_distance_to_previous": [r.pp_distance_prev for r in self.rungs],
            "rows": self.rows(),
            "rung_converged": [r.report.converged for r in self.rungs],
            "uncapped_converged": self.uncapped_report.converged,
        }


LADDER_COLUMNS = ["n", "V_n", "gap_to_V", "pp_distance", "sup_distance",
                  "neg_adjoint_integral", "iterations"]


def run_ladder(tree: ScenarioTree, spec: CostSpec, caps: Sequence[float],
               opts: SolveOptions = SolveOptions(), waive_coercivity: bool = False,
               resolution: int = 100, workers: int = 1) -> LadderReport:
    """Capped solves up an increasing cap list, warm-started rung to rung.

    Pseudopath and sup-norm distances compare the Lipschitz embedding of each
    capped optimizer with the step path of the uncapped optimizer on a
    ``resolution``-step grid, worst case over scenario paths.
    """
    from .meyer_zheng import ladder_distances

    caps = [float(c) for c in caps]
    if not caps or any(b <= a for a, b in zip(caps, caps[1:])):
        raise TreeError("caps must be a nonempty strictly increasing list")
    rungs = []
    prev = None
    for n in caps:
        plan, rep = solve_capped(tree, spec, n, opts, warm_start=prev)
        Y = _adjoint_values(spec, tree, plan.levels())
        rungs.append(LadderRung(n, plan, rep, negative_adjoint_integral(tree, Y)))
        prev = plan
    u_plan, u_rep = solve_uncapped(tree, spec, opts, waive_coercivity=waive_coercivity)

    def distances(j):
        r = rungs[j]
        other = rungs[j - 1] if j > 0 else None
        return ladder_distances(tree, r.plan, r.n, u_plan, resolution,
                                None if other is None else (other.plan, other.n))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            dists = list(ex.map(distances, range(len(rungs))))
    else:
        dists = [distances(j) for j in range(len(rungs))]
    for r, (pp, sup, pp_prev) in zip(rungs, dists):
        r.pp_distance, r.sup_distance, r.pp_distance_prev = pp, sup, pp_prev
    values = [r.value for r in rungs]
    monotone = all(b <= a + 1e-8 for a, b in zip(values, values[1:])) and \
        all(v >= u_rep.value - 1e-8 for v in values)
    return LadderReport(caps, values, u_rep.value, rungs, u_plan, u_rep, monotone, resolution)


# -- brute force -------------------------------------------------------------------

def _window_min(F: np.ndarray, width: Optional[int]) -> np.ndarray:
    """out[j] = min(F[j : j + width]) (suffix minimum when ``width`` is None)."""
    if width is None:
        return np.minimum.accumulate(F[::-1])[::-1]
    out = F.copy()
    span = 1
    # doubling: out holds min over [j, j + span)
    while span < width:
        step = min(span, width - span)
        shifted = np.full_like(out, np.inf)
        shifted[:-step] = out[step:]
        out = np.minimum(out, shifted)
        span += step
    return out


def grid_search_value(tree: ScenarioTree, spec: CostSpec, resolution: float = 1e-3,
                      a_max: float = 4.0, n: Optional[float] = None,
                      interval_cost: Optional[Callable] = None) -> float:
    """Exhaustive minimisation over plans whose levels lie on a uniform grid.

    Dynamic programming over the accumulated control (k = 1 only); with
    ``n`` the per-step cap ``n * dt`` applies and the initial jump is zero.
    Every plan with increments in multiples of ``resolution`` and levels up
    to ``a_max`` is considered.

    By default the running cost is the left-endpoint ``h(L_i, A_i) dt``.
    ``interval_cost(l_from, l_to, a, dt)`` replaces it with a per-edge
    charge for holding level ``a`` while L moves from ``l_from`` to ``l_to``.
    """
    if spec.k != 1:
        raise ValueError("grid search supports k = 1 only")
    K = int(round(a_max / resolution))
    a = np.arange(K + 1) * resolution
    fv = spec.f_at(tree.grid.times)[:, 0]
    M = tree.steps
    dts = tree.grid.deltas
    V = {}
    for i in range(M, -1, -1):
        for v in tree.slices[i]:
            l = np.repeat(tree.l_values[v][None, :], K + 1, axis=0)
            if i == M:
                H = np.asarray(spec.g(l, a[:, None]), dtype=float)
            elif interval_cost is None:
                H = np.asarray(spec.h(l, a[:, None]), dtype=float) * dts[i]
                for c in tree.children[v]:
                    H = H + tree.transition_prob[c] * V[c]
            else:
                H = np.zeros(K + 1)
                for c in tree.children[v]:
                    edge = interval_cost(tree.l_values[v], tree.l_values[c], a, dts[i])
                    H = H + tree.transition_prob[c] * (V[c] + edge)
            price = fv[i]
            if i == 0 and n is not None:
                V[v] = H
                continue
            width = None
            if n is not None:
                width = int(math.floor(n * dts[i - 1] / resolution + 1e-9)) + 1
            V[v] = _window_min(price * a + H, width) - price * a
    return float(V[tree.root][0])


def path_tree(tree: ScenarioTree, leaf_position: int) -> ScenarioTree:
    """Deterministic single-path tree following one scenario."""
    nodes = tree.paths[leaf_position]
    parent = [-1] + list(range(len(nodes) - 1))
    return ScenarioTree(tree.grid, parent, [1.0] * len(nodes), tree.l_values[nodes])


def anticipative_value(tree: ScenarioTree, spec: CostSpec, resolution: float = 1e-3,
                       a_max: float = 4.0, interval_cost: Optional[Callable] = None) -> float:
    """Value when the control sees the whole scenario at time 0 (per-path optimum)."""
    return math.fsum(tree.node_prob[leaf] * grid_search_value(path_tree(tree, j), spec, resolution,
                                                              a_max, interval_cost=interval_cost)
                     for j, leaf in enumerate(tree.leaves))
