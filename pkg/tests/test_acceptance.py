"""Acceptance criteria 1-11, one test each, at the stated tolerances.

Every test prints a ``PASS``/``FAIL`` line (also collected into the terminal
summary).  Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline.
"""
import itertools
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from monotone_follower.admissibility import (RandomizedModel, check_conditional_independence,
                                             check_coupling, couple_conditionally_independent,
                                             optional_project)
from monotone_follower.cli import main
from monotone_follower.costs import ControlPlan, expected_cost, quadratic_spec
from monotone_follower.lattice import (AdaptedProcess, build_binomial_tree, build_lottery_tree,
                                       build_random_tree)
from monotone_follower.meyer_zheng import conditional_variation
from monotone_follower.pontryagin import (capped_kkt_identities, certify, compute_adjoint,
                                          cost_gradient, optimality_gap_bound)
from monotone_follower.repro import exp_nonattain
from monotone_follower.solver import SolveOptions, grid_search_value, run_ladder, solve_uncapped
from monotone_follower.stopping import (StoppingPolicy, equivalence_check, payoff_process,
                                        snell_min, snell_value_exact, stopping_value,
                                        stopping_value_exact)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
CAPS = [1, 2, 4, 8, 16]


@contextmanager
def criterion(n, title, limit=None):
    """Time the block, print one PASS/FAIL line and re-raise any failure."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"runtime {elapsed:.2f}s exceeds {limit}s"
    except BaseException as exc:
        line = f"FAIL criterion {n:2d} {title}: {exc}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        raise
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = f"PASS criterion {n:2d} {title} ({elapsed:.2f}s{', ' + extra if extra else ''})"
    ACCEPTANCE_LINES[n] = line
    print(line)


def lottery_tree():
    return build_lottery_tree(1, [(0.0, 0.5), (2.0, 0.5)])


@pytest.fixture(scope="module")
def ladders():
    spec = quadratic_spec()
    trees = {"lottery": lottery_tree(), "binomial4": build_binomial_tree(4, 1.0)}
    return {name: (t, spec, run_ladder(t, spec, CAPS, resolution=100)) for name, t in trees.items()}


def test_01_quadratic_terminal():
    with criterion(1, "quadratic-terminal reproduction", limit=1.0) as d:
        t = lottery_tree()
        plan, rep = solve_uncapped(t, quadratic_spec())
        leaves = t.leaves
        # per-branch closed form: minimise a + (l - a)^2 / 2 over a >= 0
        grid = np.linspace(0.0, 3.0, 30001)
        branch_opt = [grid[np.argmin(grid + 0.5 * (l - grid) ** 2)] for l in t.l_values[leaves, 0]]
        oracle_value = math.fsum(p * (a + 0.5 * (l - a) ** 2) for p, a, l in
                                 zip(t.node_prob[leaves], branch_opt, t.l_values[leaves, 0]))
        A_T = plan.levels()[leaves, 0]
        rule = np.maximum(0.0, t.l_values[leaves, 0] - 1.0)
        assert np.max(np.abs(A_T - rule)) <= 1e-6
        assert np.max(np.abs(A_T - branch_opt)) <= 1e-4
        assert abs(rep.value - 0.75) <= 1e-6 and abs(oracle_value - 0.75) <= 1e-6
        d["value"] = f"{rep.value:.12g}"


def test_02_ladder(ladders):
    with criterion(2, "ladder monotonicity and convergence", limit=10.0) as d:
        start = time.perf_counter()
        fresh = {name: run_ladder(t, spec, CAPS) for name, (t, spec, _) in ladders.items()}
        d["ladder_seconds"] = f"{time.perf_counter() - start:.2f}"
        oracle = {"lottery": 0.75,
                  "binomial4": grid_search_value(ladders["binomial4"][0], quadratic_spec(), 1e-3)}
        for name, rep in fresh.items():
            v = rep.values
            assert all(b <= a + 1e-8 for a, b in zip(v, v[1:])), (name, v)
            assert abs(v[-1] - rep.uncapped_value) <= 1e-4, (name, v[-1], rep.uncapped_value)
            assert abs(rep.uncapped_value - oracle[name]) <= 1e-4, (name, rep.uncapped_value)
            d[f"V16_{name}"] = f"{v[-1]:.8g}"


def test_03_certificate():
    with criterion(3, "FBSDE certificate soundness and completeness", limit=30.0) as d:
        rng = np.random.default_rng(3)
        problems = [(lottery_tree(), quadratic_spec()),
                    (build_binomial_tree(3, 1.0), quadratic_spec(f=0.5, h_weight=1.0))]
        problems += [(build_random_tree(3, 2, 1, seed=s), quadratic_spec(f=0.3, h_weight=1.0))
                     for s in range(4)]
        checked = 0
        for t, spec in problems:
            plan, rep = solve_uncapped(t, spec)
            if rep.kkt_residual > 1e-7:
                continue
            cert = certify(t, spec, plan, tolerance=1e-6)
            assert cert.certified, cert.failing()
            Y = compute_adjoint(t, spec, plan)
            J = expected_cost(spec, t, plan)
            for _ in range(1000 // len(problems) + 1):
                x = rng.exponential(rng.uniform(0.05, 2.0), size=(t.n_nodes, 1))
                x[rng.uniform(size=x.shape) < 0.4] = 0.0
                comp = ControlPlan.from_node_increments(t, x)
                Jc = expected_cost(spec, t, comp)
                bound = optimality_gap_bound(t, spec, plan, Y, comp)
                assert bound <= Jc + 1e-6 and J <= bound + 1e-6
                checked += 1
        assert checked >= 1000
        d["competitors"] = checked


def test_04_capped_identities(ladders):
    with criterion(4, "capped KKT identities and limit trace") as d:
        for name, (t, spec, rep) in ladders.items():
            for r in rep.rungs:
                kkt = capped_kkt_identities(t, spec, r.plan, r.n, atol=1e-9)
                assert kkt.identity_gap <= 1e-6, (name, r.n, kkt)
            trace = [r.neg_adjoint_integral for r in rep.rungs]
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])), (name, trace)
            assert trace[-1] <= 1e-3, (name, trace)
            d[f"trace_{name}"] = "[" + ", ".join(f"{v:.3g}" for v in trace) + "]"


def enumerate_stopping_rules(tree, Z):
    """Minimum of E[Z_tau; tau < inf] over every pure stopping rule (stop/continue per node).

    Distinct rules often induce the same stopping time, so each induced time is
    evaluated once, in exact rational arithmetic.
    """
    taus = set()
    for choice in itertools.product([False, True], repeat=tree.n_nodes):
        idx = [-1] * tree.leaves.size
        for j, row in enumerate(tree.paths):
            for i, v in enumerate(row):
                if choice[v]:
                    idx[j] = i
                    break
        taus.add(tuple(idx))
    return min(stopping_value_exact(tree, Z, StoppingPolicy(tree, np.array(tau))) for tau in taus)


def test_05_stopping():
    with criterion(5, "stopping equivalence") as d:
        cases = [("lottery", lottery_tree(), quadratic_spec()),
                 ("binomial3", build_binomial_tree(3, 1.0), quadratic_spec(f=0.5, h_weight=1.0))]
        for name, t, spec in cases:
            plan, _ = solve_uncapped(t, spec)
            eq = equivalence_check(t, spec, plan, tolerance=1e-6)
            assert abs(eq.control_stopping_value - eq.snell_value) <= 1e-6, (name, eq.to_dict())
            Z = payoff_process(t, spec)
            exact = snell_value_exact(t, Z)
            # exact rational arithmetic on the float inputs: equality is exact
            assert exact == enumerate_stopping_rules(t, Z), name
            # the float envelope differs from it only by summation rounding
            u = snell_min(t, Z).value
            assert abs(u - float(exact)) <= 4 * np.finfo(float).eps * max(1.0, abs(u)), name
            assert abs(stopping_value(t, Z, eq.policy) - u) <= 1e-6, name
            d[f"U_{name}"] = f"{u:.10g}"


def test_06_pseudopath_contrast(ladders):
    with criterion(6, "pseudopath vs sup-norm contrast") as d:
        for name, (_, _, rep) in ladders.items():
            assert rep.resolution == 100
            assert rep.rungs[-1].pp_distance < 0.05, (name, rep.pseudopath_gaps)
            assert all(r.sup_distance >= 0.4 for r in rep.rungs), name
            d[f"pp_{name}"] = f"{rep.rungs[-1].pp_distance:.4f}"
            d[f"sup_{name}"] = f"{rep.rungs[-1].sup_distance:.3f}"


def test_07_gradient_consistency():
    with criterion(7, "gradient/adjoint consistency") as d:
        rng = np.random.default_rng(7)
        worst = 0.0
        for i in range(100):
            t = build_random_tree(3, 2, 1, seed=i)
            spec = quadratic_spec(f=rng.uniform(0.1, 1.0), h_weight=rng.uniform(0.0, 2.0))
            x = rng.uniform(0.05, 1.0, size=(t.n_nodes, 1))
            g = cost_gradient(t, spec, ControlPlan.from_node_increments(t, x)).ravel()
            h = 1e-6
            fd = np.empty_like(g)
            for v in range(t.n_nodes):
                up, dn = x.copy(), x.copy()
                up[v] += h
                dn[v] -= h
                fd[v] = (expected_cost(spec, t, ControlPlan.from_node_increments(t, up))
                         - expected_cost(spec, t, ControlPlan.from_node_increments(t, dn))) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
        assert worst <= 1e-5
        d["worst_rel_error"] = f"{worst:.2e}"


def test_08_projection_and_coupling():
    with criterion(8, "optional projection and coupling") as d:
        rng = np.random.default_rng(8)
        spec = quadratic_spec(f=0.3, h_weight=1.0)
        worst_rise = -math.inf
        for i in range(500):
            t = build_random_tree(3, 2, 1, seed=i % 25)
            r = int(rng.integers(1, 5))
            x = rng.exponential(0.4, size=(r, t.n_nodes, 1))
            x[rng.uniform(size=x.shape) < 0.3] = 0.0
            model = RandomizedModel(t, rng.dirichlet(np.ones(r)), x)
            res = optional_project(model, spec)
            assert np.all(res.plan.node_increments() >= 0.0)
            assert np.all(np.diff(res.plan.path_levels(), axis=1) >= 0.0)
            assert res.cost_after <= res.cost_before + 1e-10
            worst_rise = max(worst_rise, res.cost_after - res.cost_before)
            if i % 10 == 0:
                other = RandomizedModel(t, [1.0], rng.exponential(0.4, size=(1, t.n_nodes, 1)))
                c = couple_conditionally_independent(model.to_joint_law(), other.to_joint_law())
                rep = check_coupling(c, model.to_joint_law(), other.to_joint_law())
                assert rep.tv_first <= 1e-12 and rep.tv_second <= 1e-12
                assert rep.conditional_tv <= 1e-10
                for k in range(t.steps + 1):
                    assert check_conditional_independence(c, k).ok
        d["max_cost_change"] = f"{worst_rise:.3g}"


def test_09_nonattainment():
    with criterion(9, "nonattainment diagnostics") as d:
        res = exp_nonattain(max_iterations=10_000)
        assert res.passed, res.lines
        value, a_min = res.data["final_value"], res.data["final_min_terminal_level"]
        assert value <= 0.01 and a_min >= 5 and res.data["rejected_without_waiver"]
        assert res.data["iterations"] <= 10_000 and res.data["diverging"]
        d["value"] = f"{value:.4g}"
        d["min_A_T"] = f"{a_min:.3g}"
        d["iterations"] = res.data["iterations"]


def test_10_variation_closed_forms():
    with criterion(10, "conditional-variation closed forms") as d:
        rng = np.random.default_rng(10)
        worst = 0.0
        for s in range(50):
            t = build_random_tree(3, 3, 1, seed=s)
            p = t.node_prob[t.leaves]
            m = np.zeros(t.n_nodes)
            m[t.leaves] = rng.normal(size=t.leaves.size)
            for i in range(t.steps - 1, -1, -1):
                for v in t.slices[i]:
                    m[v] = math.fsum(t.transition_prob[c] * m[c] for c in t.children[v])
            got = conditional_variation(t, AdaptedProcess(t, m))
            worst = max(worst, abs(got - math.fsum(p * np.abs(m[t.leaves]))))
            a = ControlPlan.from_node_increments(t, rng.exponential(size=(t.n_nodes, 1))).levels()[:, 0]
            got = conditional_variation(t, AdaptedProcess(t, a))
            expect = math.fsum(p * (a[t.leaves] - a[t.root])) + math.fsum(p * a[t.leaves])
            worst = max(worst, abs(got - expect))
        assert worst <= 1e-12
        d["worst_abs_error"] = f"{worst:.1e}"


def test_11_determinism(tmp_path, monkeypatch):
    with criterion(11, "byte-identical artifacts across 1, 2, 8 threads") as d:
        runs = [["ladder", "--config", CONFIGS / "quadratic_lottery.toml"],
                ["ladder", "--config", CONFIGS / "binomial4.toml"],
                ["stop", "--config", CONFIGS / "quadratic_lottery.toml"],
                ["mzdist", "--config", CONFIGS / "binomial4.toml"],
                ["solve", "--config", CONFIGS / "zero.toml", "--seed", "5"],
                ["repro", "quadratic-terminal"], ["repro", "exp-nonattain"],
                ["repro", "ray-counterexample"]]
        files = 0
        for k, argv in enumerate(runs):
            snaps = []
            for threads in ("1", "2", "8", "1"):
                monkeypatch.setenv("MONOFOLLOW_THREADS", threads)
                out = tmp_path / f"{k}-{threads}-{len(snaps)}"
                assert main([str(a) for a in argv] + ["--out", str(out)]) == 0, argv
                snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
            assert all(s == snaps[0] for s in snaps), argv
            files += len(snaps[0])
        d["artifacts_compared"] = files
