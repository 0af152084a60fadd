"""Optimal stopping counterpart of the one-dimensional monotone-follower problem.

The payoff of stopping at node v is the adjoint of the zero control,
``Z_v = E[dC(L, 0)_{t_v} | v]``; never stopping pays 0.  The minimising
Snell envelope is ``U = min(Z, 0)`` at the horizon and
``U_v = min(Z_v, E[U | v])`` before it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .costs import ControlPlan, CostSpec, _checked
from .errors import DimensionError, UncertifiedPlanError
from .lattice import AdaptedProcess, ScenarioTree
from .pontryagin import _adjoint_values, certify

NEVER = -1


def _require_scalar(spec: CostSpec):
    if spec.k != 1:
        raise DimensionError("the stopping problem is defined for k = 1 only")


def payoff_process(tree: ScenarioTree, spec: CostSpec, form: str = "proof") -> AdaptedProcess:
    """Stopping payoff Z.

    ``form="proof"`` (default) charges the terminal gradient at ``L_T``, which
    equals the adjoint at the zero control.  ``form="display"`` evaluates
    ``g_a`` at the stopping node instead; it is offered for comparison only.
    """
    _require_scalar(spec)
    zero = np.zeros((tree.n_nodes, 1))
    Z = _adjoint_values(spec, tree, zero)
    if form == "proof":
        return AdaptedProcess(tree, Z)
    if form != "display":
        raise ValueError(f"unknown payoff form {form!r}")
    nodes = np.arange(tree.n_nodes)
    gg = _checked(spec.grad_g(tree.l_values, zero), nodes, "grad_g")
    leaves = tree.leaves
    g_at_T = spec.grad_g(tree.l_values[leaves], zero[leaves])
    # remove E[g_a(L_T, 0) | v] and add g_a(L_v, 0)
    tail = tree.backward_average(g_at_T, tree.steps)
    return AdaptedProcess(tree, Z - tail + gg)


@dataclass
class SnellEnvelope:
    U: AdaptedProcess
    continuation: np.ndarray
    stop_region: frozenset

    @property
    def value(self) -> float:
        return float(self.U.values[self.U.tree.root, 0])


@dataclass
class StoppingPolicy:
    """Per-scenario stopping time index, ``NEVER`` (-1) for no stop."""
    tree: ScenarioTree
    stop_index: np.ndarray

    def label(self, j: int) -> str:
        i = int(self.stop_index[j])
        return "never" if i == NEVER else str(i)


def snell_min(tree: ScenarioTree, Z: AdaptedProcess) -> SnellEnvelope:
    z = Z.values[:, 0]
    U = np.empty(tree.n_nodes)
    cont = np.zeros(tree.n_nodes)
    q = tree.transition_prob
    leaves = tree.leaves
    U[leaves] = np.minimum(z[leaves], 0.0)
    for i in range(tree.steps - 1, -1, -1):
        for v in tree.slices[i]:
            acc = 0.0
            for c in tree.children[v]:
                acc = acc + q[c] * U[c]
            cont[v] = acc
            U[v] = min(z[v], acc)
    if np.any(U > 0):
        raise ArithmeticError("Snell envelope above the never-stop value 0")
    # ties go to continuing, so nonnegative payoffs never trigger a stop;
    # at the horizon the continuation is never stopping (0)
    region = frozenset(int(v) for v in range(tree.n_nodes) if z[v] < cont[v])
    return SnellEnvelope(AdaptedProcess(tree, U), cont, region)


def snell_value_exact(tree: ScenarioTree, Z: AdaptedProcess) -> Fraction:
    """U at the root in exact rational arithmetic on the float inputs (Z and q)."""
    z = [Fraction(float(v)) for v in Z.values[:, 0]]
    q = [Fraction(float(v)) for v in tree.transition_prob]
    U = [Fraction(0)] * tree.n_nodes
    for v in tree.leaves:
        U[v] = min(z[v], Fraction(0))
    for i in range(tree.steps - 1, -1, -1):
        for v in tree.slices[i]:
            U[v] = min(z[v], sum((q[c] * U[c] for c in tree.children[v]), Fraction(0)))
    return U[tree.root]


def stopping_value_exact(tree: ScenarioTree, Z: AdaptedProcess, policy: StoppingPolicy) -> Fraction:
    """E[Z_tau ; tau < infinity] in exact arithmetic; path weights are products of q."""
    q = [Fraction(float(v)) for v in tree.transition_prob]
    total = Fraction(0)
    for j, row in enumerate(tree.paths):
        i = int(policy.stop_index[j])
        if i == NEVER:
            continue
        w = Fraction(1)
        for v in row[1:]:
            w *= q[v]
        total += w * Fraction(float(Z.values[row[i], 0]))
    return total


def policy_from_region(tree: ScenarioTree, region) -> StoppingPolicy:
    """First-entry rule for a set of stopping nodes."""
    idx = np.full(tree.leaves.size, NEVER)
    for j, row in enumerate(tree.paths):
        for i, v in enumerate(row):
            if int(v) in region:
                idx[j] = i
                break
    return StoppingPolicy(tree, idx)


def tau_from_control(plan: ControlPlan) -> StoppingPolicy:
    """First grid index where the accumulated control is positive (0 for an initial jump)."""
    if plan.k != 1:
        raise DimensionError("tau extraction needs k = 1")
    levels = plan.path_levels()[:, :, 0]
    idx = np.full(levels.shape[0], NEVER)
    for j, row in enumerate(levels):
        hit = np.flatnonzero(row > 0)
        if hit.size:
            idx[j] = hit[0]
    return StoppingPolicy(plan.tree, idx)


def stopping_value(tree: ScenarioTree, Z: AdaptedProcess, policy: StoppingPolicy) -> float:
    """E[Z_tau ; tau < infinity] by scenario enumeration."""
    z = Z.values[:, 0]
    terms = []
    for j, (row, leaf) in enumerate(zip(tree.paths, tree.leaves)):
        i = int(policy.stop_index[j])
        if i != NEVER:
            terms.append(tree.node_prob[leaf] * z[row[i]])
    return math.fsum(terms)


@dataclass
class EquivalenceReport:
    control_stopping_value: float
    snell_value: float
    proof_bound: float
    tolerance: float
    policy: StoppingPolicy
    snell: SnellEnvelope

    @property
    def snell_gap(self) -> float:
        return self.control_stopping_value - self.snell_value

    @property
    def bound_gap(self) -> float:
        return abs(self.control_stopping_value - self.proof_bound)

    @property
    def passed(self) -> bool:
        return self.snell_gap <= self.tolerance and self.bound_gap <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "schema": "monotone-follower/stopping-equivalence/1",
            "control_stopping_value": self.control_stopping_value,
            "snell_value": self.snell_value,
            "proof_bound": self.proof_bound,
            "snell_gap": self.snell_gap,
            "bound_gap": self.bound_gap,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "policy": [self.policy.label(j) for j in range(self.policy.stop_index.size)],
        }


def equivalence_check(tree: ScenarioTree, spec: CostSpec, plan: ControlPlan,
                      tolerance: float = 1e-6) -> EquivalenceReport:
    """Does the control's first-increase time solve the stopping problem?

    The plan must carry a valid Pontryagin certificate.  Reports the stopping
    value of ``tau_A``, the Snell value, and ``E[dC(L, 0)_0 - Y_0]``, which the
    stopping value of ``tau_A`` must equal.
    """
    _require_scalar(spec)
    cert = certify(tree, spec, plan, tolerance)
    if not cert.certified:
        raise UncertifiedPlanError(f"plan not certified: {', '.join(cert.failing())}")
    Z = payoff_process(tree, spec)
    snell = snell_min(tree, Z)
    policy = tau_from_control(plan)
    K = stopping_value(tree, Z, policy)
    Y = _adjoint_values(spec, tree, plan.levels())
    bound = float(Z.values[tree.root, 0] - Y[tree.root, 0])
    return EquivalenceReport(K, snell.value, bound, tolerance, policy, snell)


STOP_REGION_COLUMNS = ["node", "time", "L", "Z", "U", "in_region"]


def stop_region_rows(tree: ScenarioTree, Z: AdaptedProcess, snell: SnellEnvelope) -> list[dict]:
    rows = []
    for v in range(tree.n_nodes):
        rows.append({
            "node": v,
            "time": tree.node_time(v),
            "L": " ".join(repr(float(x)) for x in tree.l_values[v]),
            "Z": float(Z.values[v, 0]),
            "U": float(snell.U.values[v, 0]),
            "in_region": int(v in snell.stop_region),
        })
    return rows
