"""Adjoint process, FBSDE residual certificate and capped KKT identities.

The adjoint at node v is the conditional expectation of the subgradient
process at v's time::

    Y_v = f(t_v) + E[ sum_{j >= i(v)} grad h(L_j, A_j) dt_{j+1} + grad g(L_T, A_T) | v ]

and ``node_prob[v] * Y_v`` is exactly the partial derivative of the
expected cost with respect to the increment at v (the root stands for the
initial jump).  The solver uses this as its gradient, so optimizer and
certificate never disagree.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .costs import ControlPlan, CostSpec, _checked, expected_cost, subgradient_process
from .errors import GradientsRequired, InfeasiblePlanError
from .lattice import AdaptedProcess, ScenarioTree, conditional_expectation

CERT_SCHEMA = "monotone-follower/certificate/1"


def _adjoint_values(spec: CostSpec, tree: ScenarioTree, A: np.ndarray) -> np.ndarray:
    if not spec.has_gradients:
        raise GradientsRequired("the adjoint needs grad_h and grad_g")
    M = tree.steps
    ti = tree.time_index
    fv = spec.f_at(tree.grid.times)
    W = np.empty_like(A)
    leaves = tree.leaves
    W[leaves] = _checked(spec.grad_g(tree.l_values[leaves], A[leaves]), leaves, "grad_g")
    inner = np.flatnonzero(ti < M)
    gh = np.zeros_like(A)
    gh[inner] = _checked(spec.grad_h(tree.l_values[inner], A[inner]), inner, "grad_h")
    gh[inner] *= tree.grid.deltas[ti[inner]][:, None]
    q = tree.transition_prob
    for i in range(M - 1, -1, -1):
        for v in tree.slices[i]:
            acc = gh[v].copy()
            for c in tree.children[v]:
                acc += q[c] * W[c]
            W[v] = acc
    return fv[ti] + W


def compute_adjoint(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan,
                    verify: bool = False) -> AdaptedProcess:
    """Backward induction for Y; ``verify`` cross-checks against path enumeration."""
    Y = AdaptedProcess(tree, _adjoint_values(spec, tree, plan.levels()))
    if verify:
        ref = adjoint_by_enumeration(tree, spec, plan)
        err = float(np.max(np.abs(ref - Y.values)))
        if err > 1e-12 * max(1.0, float(np.max(np.abs(ref)))):
            raise ArithmeticError(f"adjoint disagrees with path enumeration by {err:.3e}")
    return Y


def adjoint_by_enumeration(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan) -> np.ndarray:
    """Y via conditional expectations of the pathwise subgradient (oracle route)."""
    samples = tree.path_samples()
    sub = np.stack([subgradient_process(spec, s, plan).values for s in samples])
    out = np.empty((tree.n_nodes, spec.k))
    for i in range(tree.steps + 1):
        x = np.zeros((tree.n_nodes, spec.k))
        x[tree.leaves] = sub[:, i, :]
        ce = conditional_expectation(tree, AdaptedProcess(tree, x), i, tree.steps)
        out[tree.slices[i]] = ce.values[tree.slices[i]]
    return out


def cost_gradient(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan) -> np.ndarray:
    """d J / d increment per node (root row: initial jump) = node_prob * Y."""
    Y = _adjoint_values(spec, tree, plan.levels())
    return tree.node_prob[:, None] * Y


def _running_gradient_sums(spec: CostSpec, tree: ScenarioTree, A: np.ndarray) -> np.ndarray:
    """N_v = sum over times strictly before t_v of grad h dt along v's root path."""
    N = np.zeros_like(A)
    inner = np.flatnonzero(tree.time_index < tree.steps)
    gh = np.zeros_like(A)
    gh[inner] = spec.grad_h(tree.l_values[inner], A[inner])
    gh[inner] *= tree.grid.deltas[tree.time_index[inner]][:, None]
    for s in tree.slices[1:]:
        par = tree.parent[s]
        N[s] = N[par] + gh[par]
    return N


@dataclass
class FBSDECertificate:
    negativity_residual: float
    complementarity_residual: float
    pathwise_complementarity: float
    martingale_defect: float
    terminal_defect: float
    admissibility_checked: bool
    tolerance: float

    @property
    def certified(self) -> bool:
        return self.admissibility_checked and all(
            r <= self.tolerance for r in (self.negativity_residual, self.complementarity_residual,
                                          self.pathwise_complementarity, self.martingale_defect,
                                          self.terminal_defect))

    def failing(self) -> list[str]:
        return [name for name in ("negativity_residual", "complementarity_residual",
                                  "pathwise_complementarity", "martingale_defect", "terminal_defect")
                if getattr(self, name) > self.tolerance]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["certified"] = self.certified
        d["schema"] = CERT_SCHEMA
        return d


def certify(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan,
            tolerance: float = 1e-6) -> FBSDECertificate:
    """Residuals of the discrete Pontryagin system for an (uncapped) plan."""
    if plan.tree is not tree:
        raise InfeasiblePlanError("plan lives on a different tree")
    A = plan.levels()
    x = plan.node_increments()
    Y = _adjoint_values(spec, tree, A)
    p = tree.node_prob

    negativity = max(0.0, float(-np.min(Y)))
    comp_expect = abs(math.fsum((p[:, None] * Y * x).ravel()))
    comp_path = float(np.max(np.abs(np.sum(Y * x, axis=1))))

    N = _running_gradient_sums(spec, tree, A)
    fv = spec.f_at(tree.grid.times)[tree.time_index]
    mart = Y + N - fv
    defect = 0.0
    q = tree.transition_prob
    for v in np.flatnonzero(tree.time_index < tree.steps):
        nxt = sum(q[c] * mart[c] for c in tree.children[v])
        defect = max(defect, float(np.max(np.abs(mart[v] - nxt))))

    leaves = tree.leaves
    term = Y[leaves] - spec.f_at([tree.grid.horizon]) - spec.grad_g(tree.l_values[leaves], A[leaves])
    terminal = float(np.max(np.abs(term)))
    return FBSDECertificate(negativity, comp_expect, comp_path, defect, terminal,
                            admissibility_checked=True, tolerance=tolerance)


def optimality_gap_bound(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan,
                         Y: Optional[AdaptedProcess], competitor: ControlPlan) -> float:
    """Lower bound J(plan) + E<Y, dA'> - E<Y, dA> on the competitor's cost."""
    if competitor.tree is not tree or plan.tree is not tree:
        raise InfeasiblePlanError("plans must live on the same tree")
    if Y is None:
        Y = compute_adjoint(tree, spec, plan)
    p = tree.node_prob[:, None]
    pay_comp = math.fsum((p * Y.values * competitor.node_increments()).ravel())
    pay_plan = math.fsum((p * Y.values * plan.node_increments()).ravel())
    return expected_cost(spec, tree, plan) + pay_comp - pay_plan


@dataclass
class CappedKKTReport:
    lhs: float            # n * E int (Y)^- dt
    rhs: float            # -E int Y dA
    identity_gap: float
    positive_at_cap: float
    negative_at_zero: float
    interior_abs: float

    @property
    def max_discrepancy(self) -> float:
        return max(self.identity_gap, self.positive_at_cap, self.negative_at_zero, self.interior_abs)


def negative_adjoint_integral(tree: ScenarioTree, Y: np.ndarray) -> float:
    """E int (Y)^- dt with node v (time index i >= 1) weighting (t_{i-1}, t_i]."""
    ti = tree.time_index
    nodes = np.flatnonzero(ti >= 1)
    dt = tree.grid.deltas[ti[nodes] - 1]
    neg = np.maximum(-Y[nodes], 0.0).sum(axis=1)
    return math.fsum(tree.node_prob[nodes] * neg * dt)


def capped_kkt_identities(tree: ScenarioTree, spec: CostSpec, capped_plan: ControlPlan,
                          n: float, atol: float = 1e-12) -> CappedKKTReport:
    Y = _adjoint_values(spec, tree, capped_plan.levels())
    x = capped_plan.node_increments()
    p = tree.node_prob
    ti = tree.time_index
    nodes = np.flatnonzero(ti >= 1)
    lhs = n * negative_adjoint_integral(tree, Y)
    rhs = -math.fsum((p[:, None] * Y * x).ravel())

    cap = (n * tree.grid.deltas[ti[nodes] - 1])[:, None]
    xs, Ys = x[nodes], Y[nodes]
    at_cap = xs >= cap - atol
    at_zero = xs <= atol
    interior = ~(at_cap | at_zero)
    pos_cap = float(np.max(np.maximum(Ys, 0.0)[at_cap], initial=0.0))
    neg_zero = float(np.max(np.maximum(-Ys, 0.0)[at_zero], initial=0.0))
    inter = float(np.max(np.abs(Ys)[interior], initial=0.0))
    return CappedKKTReport(lhs, rhs, abs(lhs - rhs), pos_cap, neg_zero, inter)


def prop206b_limit_trace(spec: CostSpec, capped_plans) -> list[float]:
    """E int (Y^[n])^- dt for each capped optimizer of a ladder."""
    out = []
    for plan in capped_plans:
        Y = _adjoint_values(spec, plan.tree, plan.levels())
        out.append(negative_adjoint_integral(plan.tree, Y))
    return out
