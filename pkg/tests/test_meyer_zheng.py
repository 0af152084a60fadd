import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monotone_follower.costs import ControlPlan, quadratic_spec
from monotone_follower.errors import DimensionError
from monotone_follower.lattice import (AdaptedProcess, TimeGrid, build_binomial_tree,
                                       build_random_tree)
from monotone_follower.meyer_zheng import (DICTIONARY_VERSION, GridPath, WeightedPaths,
                                           conditional_variation, control_paths, distance_matrix,
                                           findim_marginal_distance, functional_convergence_check,
                                           pseudopath_distance, resample_path, sup_distance,
                                           tightness_certificate)
from monotone_follower.solver import run_ladder


def ramp(grid, n, jump_at=0.5, size=1.0):
    """n-Lipschitz approximation of a unit jump at ``jump_at``."""
    t = grid.times
    return GridPath(grid, np.clip(n * (t - jump_at), 0.0, size))


class TestDistances:
    def test_metric_axioms(self, rng):
        g = TimeGrid.uniform(20)
        xs = [GridPath(g, rng.normal(size=21)) for _ in range(4)]
        for x in xs:
            assert pseudopath_distance(x, x) == 0.0
            for y in xs:
                assert pseudopath_distance(x, y) == pseudopath_distance(y, x)
                for z in xs:
                    assert pseudopath_distance(x, z) <= pseudopath_distance(x, y) + pseudopath_distance(y, z) + 1e-15

    def test_bounded_by_two(self, rng):
        g = TimeGrid.uniform(10)
        x, y = GridPath(g, np.zeros(11)), GridPath(g, np.full(11, 50.0))
        assert pseudopath_distance(x, y) == pytest.approx(2.0)
        assert sup_distance(x, y) == 50.0

    def test_ramp_contrast(self):
        g = TimeGrid.uniform(1000)
        jump = GridPath(g, (g.times >= 0.5).astype(float))
        pp = [pseudopath_distance(ramp(g, n, 0.5 - 1 / n), jump) for n in (2, 8, 32, 128)]
        sup = [sup_distance(ramp(g, n, 0.5 - 1 / n), jump) for n in (2, 8, 32, 128)]
        assert all(b < a for a, b in zip(pp, pp[1:])) and pp[-1] < 0.01
        assert all(s >= 0.4 for s in sup)

    def test_grid_mismatch(self):
        a = GridPath(TimeGrid.uniform(4), np.zeros(5))
        b = GridPath(TimeGrid.uniform(2), np.zeros(3))
        with pytest.raises(DimensionError):
            pseudopath_distance(a, b)
        with pytest.raises(DimensionError):
            GridPath(TimeGrid.uniform(2), np.zeros(4))

    def test_resample(self):
        x = GridPath(TimeGrid.uniform(2), [0.0, 1.0, 3.0])
        y = resample_path(x, TimeGrid.uniform(4))
        assert y.values[:, 0].tolist() == [0.0, 0.0, 1.0, 1.0, 3.0]

    def test_distance_matrix(self):
        g = TimeGrid.uniform(10)
        fams = [[GridPath(g, np.full(11, c))] for c in (0.0, 0.5, 3.0)]
        D = distance_matrix(fams)
        assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
        assert D[0, 1] == pytest.approx(1.0) and D[0, 2] == pytest.approx(2.0)


class TestControlPaths:
    def test_step_embedding(self, lottery):
        x = np.zeros((lottery.n_nodes, 1))
        high = int(lottery.leaves[np.argmax(lottery.l_values[lottery.leaves, 0])])
        x[high] = 1.0
        paths = control_paths(lottery, ControlPlan.from_node_increments(lottery, x), TimeGrid.uniform(4))
        vals = sorted(p.values[:, 0].tolist() for p in paths)
        assert vals == [[0.0] * 5, [0.0, 0.0, 0.0, 0.0, 1.0]]

    def test_latest_ramp(self, lottery):
        x = np.zeros((lottery.n_nodes, 1))
        high = int(lottery.leaves[np.argmax(lottery.l_values[lottery.leaves, 0])])
        x[high] = 0.5
        plan = ControlPlan.from_node_increments(lottery, x)
        paths = control_paths(lottery, plan, TimeGrid.uniform(4), rate=1.0)
        top = max(paths, key=lambda p: p.values[-1, 0])
        assert top.values[:, 0].tolist() == [0.0, 0.0, 0.0, 0.25, 0.5]
        assert np.max(np.diff(top.values[:, 0])) <= 0.25 + 1e-15

    def test_ladder_contrast(self, lottery, quad):
        rep = run_ladder(lottery, quad, [1, 2, 4, 8, 16])
        assert rep.rungs[-1].pp_distance < 0.05
        assert all(r.sup_distance >= 0.4 for r in rep.rungs)
        pp = rep.pseudopath_gaps
        assert all(b <= a + 1e-12 for a, b in zip(pp, pp[1:]))


class TestVariation:
    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=20, deadline=None)
    def test_martingale(self, seed):
        t = build_random_tree(3, 3, 1, seed=seed)
        rng = np.random.default_rng(seed)
        leaf_vals = rng.normal(size=t.leaves.size)
        x = np.zeros(t.n_nodes)
        x[t.leaves] = leaf_vals
        for i in range(t.steps - 1, -1, -1):
            for v in t.slices[i]:
                x[v] = sum(t.transition_prob[c] * x[c] for c in t.children[v])
        expect = math.fsum(t.node_prob[t.leaves] * np.abs(leaf_vals))
        assert conditional_variation(t, AdaptedProcess(t, x)) == pytest.approx(expect, abs=1e-12)

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=20, deadline=None)
    def test_nondecreasing(self, seed):
        t = build_random_tree(3, 3, 1, seed=seed)
        rng = np.random.default_rng(seed)
        x = ControlPlan.from_node_increments(t, rng.exponential(size=(t.n_nodes, 1))).levels()[:, 0]
        p = t.node_prob[t.leaves]
        expect = math.fsum(p * (x[t.leaves] - x[t.root])) + math.fsum(p * x[t.leaves])
        assert conditional_variation(t, AdaptedProcess(t, x)) == pytest.approx(expect, abs=1e-12)

    def test_deterministic_drift(self):
        t = build_binomial_tree(2, 1.0)
        x = AdaptedProcess(t, t.time_index.astype(float))
        assert conditional_variation(t, x) == pytest.approx(2.0 + 2.0)

    def test_vector_rejected(self, binomial3):
        with pytest.raises(DimensionError):
            conditional_variation(binomial3, AdaptedProcess(binomial3, np.zeros((binomial3.n_nodes, 2))))

    def test_tightness(self, lottery, quad):
        rep = run_ladder(lottery, quad, [1, 2, 4])
        fam = [(lottery, [AdaptedProcess(lottery, r.plan.levels())]) for r in rep.rungs]
        cert = tightness_certificate(fam, ceiling=10.0)
        assert cert.bounded and len(cert.supremum) == 1
        assert not tightness_certificate(fam, ceiling=0.1).bounded
        with pytest.raises(ValueError):
            tightness_certificate([])


class TestFunctionals:
    def test_ramps_converge_in_integrals(self):
        g = TimeGrid.uniform(400)
        jump = GridPath(g, (g.times >= 0.5).astype(float))
        paths = [ramp(g, n, 0.5 - 1 / n) for n in (4, 16, 64, 256)]
        fns = [lambda s, x: x[:, 0], lambda s, x: np.sin(3 * s) * np.minimum(x[:, 0], 1.0)]
        rep = functional_convergence_check(paths, jump, fns, tolerance=1e-2)
        assert rep.converged
        assert np.all(np.diff(rep.integral_gaps[0]) <= 1e-15)


class TestFindim:
    def test_identical_samples(self, binomial3):
        plan = ControlPlan.from_node_increments(binomial3, np.ones((binomial3.n_nodes, 1)))
        w = WeightedPaths.from_plan(binomial3, plan)
        assert findim_marginal_distance(w, w, [0, 3]) == 0.0
        assert DICTIONARY_VERSION == "bl-clip-v1"

    def test_shift_detected(self):
        g = TimeGrid.uniform(2)
        a = WeightedPaths(g, np.zeros((1, 3)), [1.0])
        b = WeightedPaths(g, np.full((1, 3), 0.5), [1.0])
        assert findim_marginal_distance(a, b, [2]) == pytest.approx(0.5)
        assert findim_marginal_distance(a, b, [0, 1, 2]) == pytest.approx(0.5)

    def test_bounded_by_sup_shift(self, rng):
        g = TimeGrid.uniform(3)
        vals = rng.normal(size=(6, 4))
        w = rng.uniform(size=6)
        a = WeightedPaths(g, vals, w)
        b = WeightedPaths(g, vals + 0.1, w)
        assert findim_marginal_distance(a, b, [1, 3]) <= 0.1 + 1e-15

    def test_subset_validation(self):
        g = TimeGrid.uniform(2)
        a = WeightedPaths(g, np.zeros((1, 3)), [1.0])
        with pytest.raises(ValueError):
            findim_marginal_distance(a, a, [0, 1])
        with pytest.raises(ValueError):
            findim_marginal_distance(a, a, [])


class TestWorkedExamples:
    def test_ramp_against_terminal_jump(self):
        g = TimeGrid.uniform(100)
        y = GridPath(g, (g.times >= 1.0).astype(float))
        x = GridPath(g, np.clip(10 * (g.times - 0.9), 0.0, 1.0))
        assert pseudopath_distance(x, y) <= 0.1 + 1e-12
        assert sup_distance(x, y) >= 0.9 - 1e-12

    def test_domination(self, rng):
        g = TimeGrid.uniform(30)
        for _ in range(50):
            x, y = (GridPath(g, rng.normal(scale=2, size=31)) for _ in range(2))
            d = pseudopath_distance(x, y)
            sup = sup_distance(x, y)
            assert d <= g.horizon + 1
            assert d <= min(1.0, sup) * g.horizon + min(1.0, abs(x.values[-1, 0] - y.values[-1, 0])) + 1e-12

    def test_oscillating_terminal_not_converged(self):
        g = TimeGrid.uniform(10)
        limit = GridPath(g, np.zeros(11))
        paths = [GridPath(g, np.r_[np.zeros(10), (-1.0) ** k]) for k in range(6)]
        rep = functional_convergence_check(paths, limit, [lambda s, x: np.minimum(1.0, np.abs(x[:, 0]))])
        assert not rep.converged and np.all(rep.integral_gaps == 0)

    def test_constant_sequence(self):
        g = TimeGrid.uniform(5)
        x = GridPath(g, np.arange(6.0))
        rep = functional_convergence_check([x, x], x, [lambda s, v: np.sin(v[:, 0])])
        assert rep.converged and np.all(rep.integral_gaps == 0) and np.all(rep.terminal_gaps == 0)

    def test_point_masses(self):
        g = TimeGrid.uniform(1)
        a = WeightedPaths(g, np.zeros((1, 2)), [1.0])
        b = WeightedPaths(g, np.ones((1, 2)), [1.0])
        assert findim_marginal_distance(a, b, [1]) == 1.0

    def test_capped_terminal_marginals(self, lottery, quad):
        rep = run_ladder(lottery, quad, [0.25, 0.5, 1, 2])
        target = WeightedPaths.from_plan(lottery, rep.uncapped_plan)
        d = [findim_marginal_distance(WeightedPaths.from_plan(lottery, r.plan), target, [1])
             for r in rep.rungs]
        assert all(b <= a + 1e-12 for a, b in zip(d, d[1:])) and d[0] > 0 and d[-1] <= 1e-9

    def test_resample_round_trip(self, rng):
        fine, coarse = TimeGrid.uniform(40), TimeGrid.uniform(8)
        x = GridPath(fine, np.cumsum(rng.uniform(0, 0.05, size=41)))
        back = resample_path(resample_path(x, coarse), fine)
        assert pseudopath_distance(x, back) <= float(np.max(coarse.deltas)) * 1.0 + 1e-12
        assert back.values[-1, 0] == x.values[-1, 0]
        assert np.array_equal(resample_path(x, fine).values, x.values)

    def test_zero_family(self, binomial3):
        fam = [(binomial3, [AdaptedProcess(binomial3, np.zeros(binomial3.n_nodes))])]
        rep = tightness_certificate(fam, ceiling=0.0)
        assert rep.supremum == [0.0] and rep.bounded
