"""Cost functionals, control plans, subgradients and the Stieltjes pairing.

A cost is the triple ``(f, h, g)``::

    C(L, A) = int_[0,T] f dA + int_0^T h(L_t, A_t) dt + g(L_T, A_T)

discretised with the initial-jump slot for ``dA`` and the left-endpoint rule
for the ``dt`` integral.  Evaluators are vectorised over a leading axis:
``f(times) -> (m, k)``, ``h(l, a) -> (m,)`` with ``l`` of shape ``(m, d)`` and
``a`` of shape ``(m, k)``; gradients in ``a`` return ``(m, k)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import (ConvexityAuditError, DimensionError, EvaluationError,
                     GradientsRequired, InfeasiblePlanError)
from .lattice import PathSample, ScenarioTree

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]
FEAS_TOL = 1e-12


@dataclass(frozen=True)
class CostSpec:
    k: int
    d: int
    f: Callable[[np.ndarray], np.ndarray]
    h: Evaluator
    g: Evaluator
    grad_h: Optional[Evaluator] = None
    grad_g: Optional[Evaluator] = None
    # coercivity / growth metadata; only used for checks and warnings
    f_lower_bound: Optional[float] = None
    g_linear_growth: Optional[float] = None
    growth_exponents: Optional[tuple] = None
    envelope_h: Optional[Callable] = None
    envelope_g: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def has_gradients(self) -> bool:
        return self.grad_h is not None and self.grad_g is not None

    def f_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        return np.asarray(self.f(t), dtype=float).reshape(t.size, self.k)

    def scaled(self, lam: float) -> "CostSpec":
        """Same spec with f, h and g multiplied by ``lam > 0``."""
        if not lam > 0:
            raise ValueError("scale must be positive")
        f, h, g, gh, gg = self.f, self.h, self.g, self.grad_h, self.grad_g
        return replace(
            self,
            f=lambda t: lam * f(t),
            h=lambda l, a: lam * h(l, a),
            g=lambda l, a: lam * g(l, a),
            grad_h=None if gh is None else (lambda l, a: lam * gh(l, a)),
            grad_g=None if gg is None else (lambda l, a: lam * gg(l, a)),
            f_lower_bound=None if self.f_lower_bound is None else lam * self.f_lower_bound,
            g_linear_growth=None if self.g_linear_growth is None else lam * self.g_linear_growth,
            name=f"{self.name}*{lam!r}",
        )

    def growth_warnings(self) -> list[str]:
        out = []
        if self.envelope_h is None or self.envelope_g is None:
            out.append("growth envelopes for h/g not declared; gradient growth hypotheses "
                       "are unchecked (vacuous on finite trees)")
        return out


def _checked(values, nodes, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = np.flatnonzero(np.isnan(values.reshape(values.shape[0], -1)).any(axis=1))
    if bad.size:
        raise EvaluationError(what, int(nodes[bad[0]]))
    return values


# -- control plans -------------------------------------------------------------

@dataclass(frozen=True)
class ControlPlan:
    """Adapted nondecreasing follower given by per-node increments.

    ``increments[v]`` is applied at node ``v``'s time; the root row is
    always zero and the jump just before time 0 lives in ``initial_jump``.
    ``cap_per_step[i-1]`` bounds increments at time index ``i`` for capped
    plans (which also have zero initial jump).
    """
    tree: ScenarioTree
    initial_jump: np.ndarray
    increments: np.ndarray = field(repr=False)
    cap_per_step: Optional[np.ndarray] = None

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        jump = np.atleast_1d(np.asarray(self.initial_jump, dtype=float))
        if inc.shape != (self.tree.n_nodes, jump.size):
            raise DimensionError(f"increments must have shape ({self.tree.n_nodes}, {jump.size})")
        if np.any(inc[self.tree.root] != 0):
            raise InfeasiblePlanError("root increment must be zero; use initial_jump")
        if np.any(inc < 0) or np.any(jump < 0):
            raise InfeasiblePlanError("a monotone follower needs nonnegative increments")
        if self.cap_per_step is not None:
            cap = np.asarray(self.cap_per_step, dtype=float)
            if cap.shape != (self.tree.steps,):
                raise DimensionError("cap_per_step needs one entry per grid step")
            if np.any(jump != 0):
                raise InfeasiblePlanError("capped plans start at A_0 = 0")
            bound = cap[np.maximum(self.tree.time_index - 1, 0)][:, None]
            if np.any(inc > bound * (1 + FEAS_TOL) + FEAS_TOL):
                raise InfeasiblePlanError("increment exceeds the per-step cap")
            cap.setflags(write=False)
            object.__setattr__(self, "cap_per_step", cap)
        inc.setflags(write=False)
        jump.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "initial_jump", jump)

    @property
    def k(self) -> int:
        return self.initial_jump.size

    @classmethod
    def zero(cls, tree: ScenarioTree, k: int = 1, cap_per_step=None) -> "ControlPlan":
        return cls(tree, np.zeros(k), np.zeros((tree.n_nodes, k)), cap_per_step)

    @classmethod
    def from_node_increments(cls, tree: ScenarioTree, x, cap_per_step=None) -> "ControlPlan":
        """Build from an (N, k) array whose root row is the initial jump."""
        x = np.array(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        jump = x[tree.root].copy()
        x[tree.root] = 0.0
        return cls(tree, jump, x, cap_per_step)

    def node_increments(self) -> np.ndarray:
        """(N, k) increments with the initial jump stored in the root row."""
        x = self.increments.copy()
        x[self.tree.root] = self.initial_jump
        return x

    def levels(self) -> np.ndarray:
        """A at every node: initial jump plus increments along the root path."""
        return cumulate(self.tree, self.node_increments())

    def path_increments(self) -> np.ndarray:
        return self.node_increments()[self.tree.paths]

    def path_levels(self) -> np.ndarray:
        return self.levels()[self.tree.paths]


def cumulate(tree: ScenarioTree, node_increments: np.ndarray) -> np.ndarray:
    A = np.empty_like(node_increments)
    A[tree.root] = node_increments[tree.root]
    for s in tree.slices[1:]:
        A[s] = A[tree.parent[s]] + node_increments[s]
    return A


def uniform_caps(tree: ScenarioTree, n: float) -> np.ndarray:
    """Per-step caps ``n * dt_i`` for the n-Lipschitz problem."""
    return n * tree.grid.deltas


# -- pathwise quantities ---------------------------------------------------------

def _path_pieces(plan: ControlPlan, path: PathSample):
    tree = plan.tree
    nodes = np.asarray(path.nodes)
    if nodes.size != tree.steps + 1:
        raise DimensionError("path length does not match the plan's tree")
    x = plan.node_increments()[nodes]
    return nodes, x, np.cumsum(x, axis=0)


def cost_along_path(spec: CostSpec, grid, L, dA, A, nodes=None) -> float:
    """Pathwise cost from arrays: L (M+1, d), dA and A (M+1, k), row 0 of dA = jump."""
    if nodes is None:
        nodes = np.arange(grid.steps + 1)
    fv = _checked(spec.f_at(grid.times), nodes, "f")
    hv = _checked(spec.h(L[:-1], A[:-1]), nodes[:-1], "h")
    gv = _checked(spec.g(L[-1:], A[-1:]), nodes[-1:], "g")
    return float(np.sum(fv * dA) + np.sum(hv * grid.deltas) + gv[0])


def subgradient_along_path(spec: CostSpec, grid, L, A, nodes=None) -> np.ndarray:
    if not spec.has_gradients:
        raise GradientsRequired("subgradient needs grad_h and grad_g")
    if nodes is None:
        nodes = np.arange(grid.steps + 1)
    M = grid.steps
    fv = spec.f_at(grid.times)
    gh = _checked(spec.grad_h(L[:-1], A[:-1]), nodes[:-1], "grad_h") * grid.deltas[:, None]
    gg = _checked(spec.grad_g(L[-1:], A[-1:]), nodes[-1:], "grad_g")[0]
    tail = np.zeros((M + 1, spec.k))
    for i in range(M - 1, -1, -1):
        tail[i] = tail[i + 1] + gh[i]
    return fv + tail + gg


def pathwise_cost(spec: CostSpec, path: PathSample, plan: ControlPlan) -> float:
    nodes, dA, A = _path_pieces(plan, path)
    return cost_along_path(spec, plan.tree.grid, path.l_values, dA, A, nodes)


def expected_cost(spec: CostSpec, tree: ScenarioTree, plan: ControlPlan) -> float:
    """J = E[C(L, A)], accumulated node by node."""
    return _expected_cost_x(spec, tree, plan.node_increments())


def _expected_cost_x(spec: CostSpec, tree: ScenarioTree, x: np.ndarray,
                     A: Optional[np.ndarray] = None) -> float:
    if A is None:
        A = cumulate(tree, x)
    p = tree.node_prob
    ti = tree.time_index
    M = tree.steps
    fv = spec.f_at(tree.grid.times)
    inner = np.flatnonzero(ti < M)
    leaves = tree.leaves
    hv = _checked(spec.h(tree.l_values[inner], A[inner]), inner, "h")
    gv = _checked(spec.g(tree.l_values[leaves], A[leaves]), leaves, "g")
    dt_next = tree.grid.deltas[ti[inner]]
    total = np.sum(p[:, None] * fv[ti] * x)
    total += np.sum(p[inner] * hv * dt_next)
    total += np.sum(p[leaves] * gv)
    return float(total)


def enumerate_expected_cost(spec: CostSpec, tree: ScenarioTree, plan: ControlPlan) -> float:
    """Leaf-enumeration oracle: probability-weighted sum of pathwise costs."""
    return math.fsum(s.probability * pathwise_cost(spec, s, plan) for s in tree.path_samples())


@dataclass(frozen=True)
class SubgradientPath:
    values: np.ndarray


def subgradient_process(spec: CostSpec, path: PathSample, plan: ControlPlan) -> SubgradientPath:
    """dC_t = f(t) + sum_{j >= i} grad h(L_j, A_j) dt_{j+1} + grad g(L_T, A_T)."""
    if not spec.has_gradients:
        raise GradientsRequired("subgradient needs grad_h and grad_g")
    nodes, _, A = _path_pieces(plan, path)
    return SubgradientPath(subgradient_along_path(spec, plan.tree.grid, path.l_values, A, nodes))


def pairing(x, delta) -> float:
    """<X, Delta> = int_[0,T] X d(Delta); row 0 of ``delta`` is the initial jump."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if delta.ndim == 1:
        delta = delta[:, None]
    if x.shape != delta.shape:
        raise DimensionError(f"pairing shapes differ: {x.shape} vs {delta.shape}")
    return float(np.sum(x * delta))


def integration_by_parts_rhs(spec: CostSpec, path: PathSample, plan: ControlPlan, delta) -> float:
    """Right-hand side of the summation-by-parts form of <dC(L, A), Delta>.

    ``int f dDelta + sum_i grad h(L_i, A_i) Delta_i dt_{i+1} + grad g(L_T, A_T) Delta_T``
    where ``Delta_i`` is the cumulative perturbation.
    """
    tree = plan.tree
    nodes, _, A = _path_pieces(plan, path)
    delta = np.asarray(delta, dtype=float).reshape(tree.steps + 1, spec.k)
    D = np.cumsum(delta, axis=0)
    L = path.l_values
    fv = spec.f_at(tree.grid.times)
    gh = spec.grad_h(L[:-1], A[:-1])
    gg = spec.grad_g(L[-1:], A[-1:])[0]
    return float(np.sum(fv * delta) + np.sum(gh * D[:-1] * tree.grid.deltas[:, None])
                 + np.dot(gg, D[-1]))


@dataclass
class SubgradientReport:
    lhs: np.ndarray      # C(L, A + Delta) per path
    rhs: np.ndarray      # C(L, A) + <dC(L, A), Delta> per path
    violations: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations


def subgradient_inequality_check(spec: CostSpec, tree: ScenarioTree, plan_a: ControlPlan,
                                 delta, tolerance: float = 1e-9) -> SubgradientReport:
    """Pathwise check of C(L, A + Delta) >= C(L, A) + <dC(L, A), Delta>.

    ``delta`` is an (N, k) array of signed node increments (root row = jump).
    """
    delta = np.asarray(delta, dtype=float).reshape(tree.n_nodes, plan_a.k)
    moved = plan_a.node_increments() + delta
    if np.any(moved < -FEAS_TOL):
        v = int(np.flatnonzero((moved < -FEAS_TOL).any(axis=1))[0])
        raise InfeasiblePlanError(f"A + Delta decreases at node {v}")
    plan_b = ControlPlan.from_node_increments(tree, np.maximum(moved, 0.0))
    lhs, rhs, bad = [], [], []
    for j, s in enumerate(tree.path_samples()):
        c_b = pathwise_cost(spec, s, plan_b)
        sub = subgradient_process(spec, s, plan_a).values
        r = pathwise_cost(spec, s, plan_a) + pairing(sub, delta[list(s.nodes)])
        lhs.append(c_b)
        rhs.append(r)
        if c_b < r - tolerance:
            bad.append((j, c_b, r))
    return SubgradientReport(np.array(lhs), np.array(rhs), bad, tolerance)


# -- convexity / gradient audit -------------------------------------------------

@dataclass
class AuditReport:
    issues: list

    @property
    def ok(self) -> bool:
        return not self.issues


def audit_spec(spec: CostSpec, tree: ScenarioTree, a_max: float = 4.0,
               fd_step: float = 1e-6, rel_tol: float = 1e-5) -> AuditReport:
    """Probe-grid audit: f >= 0, h, g >= 0, midpoint convexity and gradients vs FD."""
    issues = []
    fv = spec.f_at(tree.grid.times)
    if np.any(fv < 0):
        issues.append("f takes negative values on the grid")
    ls = np.unique(tree.l_values, axis=0)
    if ls.shape[0] > 40:
        ls = ls[np.linspace(0, ls.shape[0] - 1, 40).astype(int)]
    base = np.linspace(0.0, a_max, 9) + 0.137
    base[0] = 0.0
    k = spec.k
    pattern = 1.0 + 0.31 * np.arange(k)
    probes = base[:, None] * pattern[None, :] / pattern.max()
    m = probes.shape[0]
    for name, phi, grad in (("h", spec.h, spec.grad_h), ("g", spec.g, spec.grad_g)):
        for l in ls:
            L = np.repeat(l[None, :], m, axis=0)
            vals = np.asarray(phi(L, probes), dtype=float)
            if np.any(vals < 0):
                issues.append(f"{name} negative at l={l.tolist()}")
            mid = 0.5 * (probes[:, None, :] + probes[None, :, :])
            ii, jj = np.triu_indices(m, 1)
            mvals = np.asarray(phi(np.repeat(l[None, :], ii.size, axis=0), mid[ii, jj]), dtype=float)
            scale = 1.0 + np.abs(vals[ii]) + np.abs(vals[jj])
            if np.any(mvals > 0.5 * (vals[ii] + vals[jj]) + 1e-12 * scale):
                issues.append(f"{name}(l, .) fails midpoint convexity at l={l.tolist()}")
            if grad is None:
                continue
            interior = probes[1:]
            Li = L[1:]
            # skip probes near a kink of |l - a|-type costs
            keep = np.ones(interior.shape[0], dtype=bool)
            if spec.d == k:
                keep = np.all(np.abs(interior - Li) > 1e-4, axis=1)
            gv = np.asarray(grad(Li[keep], interior[keep]), dtype=float)
            for c in range(k):
                e = np.zeros(k)
                e[c] = fd_step
                fd = (np.asarray(phi(Li[keep], interior[keep] + e))
                      - np.asarray(phi(Li[keep], interior[keep] - e))) / (2 * fd_step)
                err = np.abs(fd - gv[:, c])
                if np.any(err > rel_tol * np.maximum(1.0, np.abs(gv[:, c]))):
                    issues.append(f"grad_{name} disagrees with finite differences at l={l.tolist()}")
                    break
    return AuditReport(issues)


def require_convex(spec: CostSpec, tree: ScenarioTree) -> None:
    report = audit_spec(spec, tree)
    if not report.ok:
        raise ConvexityAuditError("; ".join(report.issues))


# -- built-in library ------------------------------------------------------------

def _const_f(value, k):
    value = np.broadcast_to(np.asarray(value, dtype=float), (k,)).copy()
    return lambda t: np.broadcast_to(value, (np.size(t), k)).copy()


def _zeros_h(l, a):
    return np.zeros(np.shape(a)[0])


def _zeros_grad(l, a):
    return np.zeros(np.shape(a))


def zero_spec(k: int = 1, d: int = 1) -> CostSpec:
    return CostSpec(k, d, _const_f(0.0, k), _zeros_h, _zeros_h, _zeros_grad, _zeros_grad,
                    name="zero", params={"k": k, "d": d})


def quadratic_spec(f: float = 1.0, g_weight: float = 1.0, h_weight: float = 0.0,
                   k: int = 1) -> CostSpec:
    """Tracking costs h = hw/2 |l - a|^2, g = gw/2 |l - a|^2 with constant f (needs d = k)."""
    def h(l, a):
        return 0.5 * h_weight * np.sum((l - a) ** 2, axis=1)

    def g(l, a):
        return 0.5 * g_weight * np.sum((l - a) ** 2, axis=1)

    def gh(l, a):
        return -h_weight * (l - a)

    def gg(l, a):
        return -g_weight * (l - a)

    fmin = float(np.min(f))
    return CostSpec(k, k, _const_f(f, k), h, g, gh, gg,
                    f_lower_bound=fmin if fmin > 0 else None,
                    name="quadratic",
                    params={"f": f, "g_weight": g_weight, "h_weight": h_weight, "k": k})


def exponential_spec(f: float = 0.0) -> CostSpec:
    """g(l, a) = exp(-a): value 0 is approached but never attained when f = 0."""
    def g(l, a):
        return np.sum(np.exp(-a), axis=1)

    def gg(l, a):
        return -np.exp(-a)

    return CostSpec(1, 1, _const_f(f, 1), _zeros_h, g, _zeros_grad, gg,
                    f_lower_bound=f if f > 0 else None,
                    name="exp-nonattain", params={"f": f})


def ray_spec(f0: float = 0.5, f_slope: float = 1.0) -> CostSpec:
    """f(t) = f0 + f_slope t, h = |l - a|, g = 0.

    The derivative of |l - a| in ``a`` is taken as ``sign(a - l)`` with value
    0 at the kink.
    """
    def f(t):
        return (f0 + f_slope * np.asarray(t, dtype=float))[:, None]

    def h(l, a):
        return np.abs(l - a)[:, 0]

    def gh(l, a):
        return np.sign(a - l)

    return CostSpec(1, 1, f, h, _zeros_h, gh, _zeros_grad,
                    f_lower_bound=min(f0, f0 + f_slope) if min(f0, f0 + f_slope) > 0 else None,
                    name="ray-counterexample", params={"f0": f0, "f_slope": f_slope})


SPEC_BUILDERS: dict[str, Callable[..., CostSpec]] = {
    "zero": zero_spec,
    "quadratic": quadratic_spec,
    "exp-nonattain": exponential_spec,
    "ray-counterexample": ray_spec,
}


def register_spec(name: str, builder: Callable[..., CostSpec]) -> None:
    SPEC_BUILDERS[name] = builder


def make_spec(name: str, params: Optional[dict] = None) -> CostSpec:
    try:
        builder = SPEC_BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown cost spec {name!r}; known: {sorted(SPEC_BUILDERS)}") from None
    return builder(**(params or {}))
