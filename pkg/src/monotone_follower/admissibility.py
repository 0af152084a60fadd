"""Randomized controls, conditional-independence tests, optional projection and coupling.

Everything here is exact enumeration over finite supports.  A joint law is a
list of atoms ``(path id, companion path, probability)`` where the path id
indexes the tree's scenarios and the companion path is an ``(M+1, w)`` array
(for example the levels of a control along that scenario).
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import (ControlPlan, CostSpec, cost_along_path, expected_cost,
                    subgradient_along_path)
from .errors import DimensionError, InfeasiblePlanError, MarginalMismatchError
from .lattice import ScenarioTree

CI_TOL = 1e-10
TV_TOL = 1e-12
LAW_SCHEMA = "monotone-follower/joint-law/1"


@dataclass(frozen=True)
class RandomizedModel:
    """A control driven by L and an independent time-0 lottery xi.

    ``increments[r]`` holds the (N, k) node increments (root row = initial
    jump) used when the lottery lands on outcome ``r``.
    """
    tree: ScenarioTree
    xi_probs: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.xi_probs, dtype=float)
        x = np.asarray(self.increments, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[:2] != (p.size, self.tree.n_nodes):
            raise DimensionError("increments must have shape (outcomes, nodes, k)")
        if np.any(p <= 0) or abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError("lottery probabilities must be positive and sum to 1")
        if np.any(x < 0):
            raise InfeasiblePlanError("randomized increments must be nonnegative")
        object.__setattr__(self, "xi_probs", p)
        object.__setattr__(self, "increments", x)

    @property
    def k(self) -> int:
        return self.increments.shape[2]

    def plan(self, r: int) -> ControlPlan:
        return ControlPlan.from_node_increments(self.tree, self.increments[r])

    def expected_cost(self, spec: CostSpec) -> float:
        return math.fsum(p * expected_cost(spec, self.tree, self.plan(r))
                         for r, p in enumerate(self.xi_probs))

    def to_joint_law(self) -> "JointLaw":
        atoms = []
        lp = self.tree.node_prob[self.tree.leaves]
        for r, pr in enumerate(self.xi_probs):
            levels = self.plan(r).path_levels()
            for j in range(self.tree.leaves.size):
                atoms.append((j, levels[j], float(lp[j] * pr)))
        return JointLaw(self.tree, atoms, (self.k,))


@dataclass
class JointLaw:
    tree: ScenarioTree
    atoms: list
    blocks: tuple = field(default=(1,))

    def __post_init__(self):
        clean = []
        width = sum(self.blocks)
        for j, comp, p in self.atoms:
            comp = np.asarray(comp, dtype=float)
            if comp.ndim == 1:
                comp = comp[:, None]
            if comp.shape != (self.tree.steps + 1, width):
                raise DimensionError(f"companion path must have shape ({self.tree.steps + 1}, {width})")
            clean.append((int(j), comp, float(p)))
        self.atoms = clean
        total = math.fsum(p for _, _, p in clean)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"joint law probabilities sum to {total!r}")

    @classmethod
    def from_plan(cls, tree: ScenarioTree, plan: ControlPlan) -> "JointLaw":
        levels = plan.path_levels()
        lp = tree.node_prob[tree.leaves]
        return cls(tree, [(j, levels[j], float(lp[j])) for j in range(tree.leaves.size)], (plan.k,))

    def l_marginal(self) -> np.ndarray:
        out = np.zeros(self.tree.leaves.size)
        for j, _, p in self.atoms:
            out[j] += p
        return out

    def block(self, b: int) -> "JointLaw":
        """Marginal law of (L, block b)."""
        lo = sum(self.blocks[:b])
        hi = lo + self.blocks[b]
        merged = defaultdict(float)
        keep = {}
        for j, comp, p in self.atoms:
            part = comp[:, lo:hi]
            key = (j, part.tobytes())
            merged[key] += p
            keep[key] = (j, part)
        return JointLaw(self.tree, [(keep[k][0], keep[k][1], merged[k]) for k in sorted(merged)],
                        (self.blocks[b],))

    def to_dict(self) -> dict:
        return {
            "schema": LAW_SCHEMA,
            "blocks": list(self.blocks),
            "support": [{"path": j, "companion": comp.tolist(), "prob": p}
                        for j, comp, p in self.atoms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, tree: ScenarioTree, doc: dict) -> "JointLaw":
        if doc.get("schema") != LAW_SCHEMA:
            raise ValueError(f"unsupported joint-law schema {doc.get('schema')!r}")
        return cls(tree, [(a["path"], a["companion"], a["prob"]) for a in doc["support"]],
                   tuple(doc["blocks"]))


def tv_distance(a: JointLaw, b: JointLaw) -> float:
    """Total variation between two laws of (L-path, companion)."""
    pa, pb = defaultdict(float), defaultdict(float)
    for j, comp, p in a.atoms:
        pa[(j, comp.tobytes())] += p
    for j, comp, p in b.atoms:
        pb[(j, comp.tobytes())] += p
    return 0.5 * math.fsum(abs(pa[k] - pb[k]) for k in set(pa) | set(pb))


def _factorization_gap(cells):
    """Max TV between a conditional joint law and the product of its marginals.

    ``cells`` maps group -> {(key_a, key_b): prob}.  Returns (tv, witness).
    """
    worst, witness = 0.0, None
    for group in sorted(cells, key=repr):
        joint = cells[group]
        total = math.fsum(joint.values())
        ma, mb = defaultdict(float), defaultdict(float)
        for (ka, kb), p in joint.items():
            ma[ka] += p / total
            mb[kb] += p / total
        terms = []
        cell_worst = (0.0, None)
        for ka in ma:
            for kb in mb:
                diff = abs(joint.get((ka, kb), 0.0) / total - ma[ka] * mb[kb])
                terms.append(diff)
                if diff > cell_worst[0]:
                    cell_worst = (diff, (ka, kb))
        tv = 0.5 * math.fsum(terms)
        if tv > worst:
            worst, witness = tv, (group, cell_worst[1])
    return worst, witness


@dataclass
class IndependenceResult:
    ok: bool
    total_variation: float
    witness: Optional[tuple]

    def __bool__(self):
        return self.ok


def check_conditional_independence(model, time_index: int) -> IndependenceResult:
    """Given the L-history up to ``time_index``, is (A up to that time) independent of L's future?

    The witness is ``(node, (A-prefix, scenario id))`` for the worst cell.
    """
    law = model.to_joint_law() if isinstance(model, RandomizedModel) else model
    tree = law.tree
    if not 0 <= time_index <= tree.steps:
        raise ValueError("time index out of range")
    cells = defaultdict(lambda: defaultdict(float))
    for j, comp, p in law.atoms:
        node = int(tree.paths[j, time_index])
        prefix = tuple(np.round(comp[: time_index + 1], 15).ravel().tolist())
        cells[node][(prefix, j)] += p
    tv, witness = _factorization_gap(cells)
    if witness is not None:
        node, (prefix, j) = witness
        witness = (node, (prefix, j))
    return IndependenceResult(tv <= CI_TOL, tv, witness if tv > CI_TOL else None)


@dataclass
class ProjectionResult:
    plan: ControlPlan
    cost_before: float
    cost_after: float


def optional_project(model: RandomizedModel, spec: CostSpec) -> ProjectionResult:
    """Average the control over the independent lottery, node by node.

    Since the lottery is independent of L, this is the conditional expectation
    of A given the L-history; averaging nonnegative increments keeps the result
    nondecreasing.
    """
    x = np.tensordot(model.xi_probs, model.increments, axes=1)
    plan = ControlPlan.from_node_increments(model.tree, np.maximum(x, 0.0))
    return ProjectionResult(plan, model.expected_cost(spec), expected_cost(spec, model.tree, plan))


def couple_conditionally_independent(law_lq: JointLaw, law_lr: JointLaw) -> JointLaw:
    """Glue two laws sharing the L-marginal so that Q and R are independent given L."""
    if law_lq.tree is not law_lr.tree:
        raise MarginalMismatchError("laws live on different trees")
    tree = law_lq.tree
    mq, mr = law_lq.l_marginal(), law_lr.l_marginal()
    diff = np.abs(mq - mr)
    if 0.5 * diff.sum() > TV_TOL:
        j = int(np.argmax(diff))
        raise MarginalMismatchError(f"L-marginals differ on scenario {j}: {mq[j]!r} vs {mr[j]!r}")
    by_q, by_r = defaultdict(list), defaultdict(list)
    for j, comp, p in law_lq.atoms:
        by_q[j].append((comp, p))
    for j, comp, p in law_lr.atoms:
        by_r[j].append((comp, p))
    atoms = []
    for j in range(tree.leaves.size):
        if mq[j] == 0:
            continue
        for cq, pq in by_q[j]:
            for cr, pr in by_r[j]:
                atoms.append((j, np.hstack([cq, cr]), pq * pr / mq[j]))
    # renormalise the rounding of pq * pr / m
    total = math.fsum(p for _, _, p in atoms)
    atoms = [(j, c, p / total) for j, c, p in atoms]
    coupled = JointLaw(tree, atoms, tuple(law_lq.blocks) + tuple(law_lr.blocks))
    report = check_coupling(coupled, law_lq, law_lr)
    if not report.ok:
        raise ArithmeticError(f"coupling failed its own verification: {report}")
    return coupled


@dataclass
class CouplingReport:
    tv_first: float
    tv_second: float
    conditional_tv: float

    @property
    def ok(self) -> bool:
        return self.tv_first <= TV_TOL and self.tv_second <= TV_TOL and self.conditional_tv <= CI_TOL


def check_coupling(coupled: JointLaw, law_lq: JointLaw, law_lr: JointLaw) -> CouplingReport:
    nq = len(law_lq.blocks)
    q_part = _sub_blocks(coupled, range(nq))
    r_part = _sub_blocks(coupled, range(nq, len(coupled.blocks)))
    cells = defaultdict(lambda: defaultdict(float))
    wq = sum(law_lq.blocks)
    for j, comp, p in coupled.atoms:
        cells[j][(comp[:, :wq].tobytes(), comp[:, wq:].tobytes())] += p
    ci, _ = _factorization_gap(cells)
    return CouplingReport(tv_distance(q_part, law_lq), tv_distance(r_part, law_lr), ci)


def _sub_blocks(law: JointLaw, which) -> JointLaw:
    which = list(which)
    offsets = np.cumsum((0,) + tuple(law.blocks))
    cols = np.concatenate([np.arange(offsets[b], offsets[b + 1]) for b in which])
    merged, keep = defaultdict(float), {}
    for j, comp, p in law.atoms:
        part = comp[:, cols]
        key = (j, part.tobytes())
        merged[key] += p
        keep[key] = (j, part)
    return JointLaw(law.tree, [(keep[k][0], keep[k][1], merged[k]) for k in sorted(merged)],
                    tuple(law.blocks[b] for b in which))


def coupled_gap_bound(spec: CostSpec, coupled: JointLaw, k: int) -> float:
    """E[C(L, A) + <dC(L, A), A' - A>] on a coupled law whose first block is A, second A'.

    Uses the pathwise subgradient; no adjoint or projection is involved.
    """
    tree = coupled.tree
    terms = []
    for j, comp, p in coupled.atoms:
        A, Ap = comp[:, :k], comp[:, k:2 * k]
        L = tree.l_values[tree.paths[j]]
        dA = np.diff(A, axis=0, prepend=0.0)
        dAp = np.diff(Ap, axis=0, prepend=0.0)
        sub = subgradient_along_path(spec, tree.grid, L, A)
        c = cost_along_path(spec, tree.grid, L, dA, A)
        terms.append(p * (c + float(np.sum(sub * (dAp - dA)))))
    return math.fsum(terms)
