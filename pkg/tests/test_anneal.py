import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dahsi.action import ActionProblem
from dahsi.anneal import (
    AnnealSchedule,
    Bounds,
    CandidatePool,
    anneal_once,
    dahsi_sweep,
    default_bounds,
    doubling_lambda_grid,
    down_select,
    hard_threshold,
    init_hidden_from_gradient,
    init_states,
    iterative_refinement,
    linear_lambda_grid,
    refit_parameters,
    run_seed,
)
from dahsi.dynamics import get_preset, make_dataset
from dahsi.library import FunctionLibrary, mask_key
from dahsi.optimize import MinimizeSettings

FAST = MinimizeSettings(max_iter=100, f_tol=1e-7)


@pytest.fixture(scope="module")
def lv():
    pre = get_preset("lotka_volterra")
    return pre, pre.dataset(omega=0.05, seed=1)


def lorenz_hidden_y(n=50):
    return get_preset("lorenz").dataset(omega=0.01, seed=1, n_points=n)


class TestSchedule:
    def test_rf_ladder(self):
        s = AnnealSchedule(rf0=0.5, alpha=2.0, beta_max=3)
        np.testing.assert_allclose(s.rf_values, [0.5, 1.0, 2.0, 4.0])

    @pytest.mark.parametrize("kw", [{"rf0": 0.0}, {"alpha": 1.0}, {"beta_max": 0},
                                    {"lambdas": (-0.1,)}, {"lambdas": (0.2, 0.2)}, {"lambdas": (0.3, 0.1)}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            AnnealSchedule(**kw)

    def test_defaults(self):
        s = AnnealSchedule()
        assert (s.rf0, s.alpha, s.beta_max, s.readmit) == (1e-2, 1.1, 30, False)

    def test_linear_grid(self):
        grid = linear_lambda_grid(2.5, 5.5, 0.1)
        assert len(grid) == 31 and grid[0] == 2.5 and grid[-1] == 5.5

    def test_doubling_grid(self):
        assert doubling_lambda_grid(0.1, 1.0) == (0.1, 0.2, 0.4, 0.8)
        with pytest.raises(ValueError):
            doubling_lambda_grid(0.0, 1.0)


class TestInitStates:
    def test_fully_measured_copies_data(self):
        traj = get_preset("lorenz").simulate(30)
        data = make_dataset(traj, (0, 1, 2), 0.01)
        b = default_bounds(data)
        a = init_states(data, b, 1, 10)
        c = init_states(data, b, 2, 10)
        np.testing.assert_array_equal(a.X, traj)
        np.testing.assert_array_equal(a.X, c.X)
        assert np.all(a.params == 0)

    def test_reproducible(self):
        data = lorenz_hidden_y()
        b = default_bounds(data)
        assert init_states(data, b, 5, 10).X.tobytes() == init_states(data, b, 5, 10).X.tobytes()
        assert init_states(data, b, 5, 10).X.tobytes() != init_states(data, b, 6, 10).X.tobytes()

    def test_measured_columns_copied(self):
        data = lorenz_hidden_y()
        est = init_states(data, default_bounds(data), 0, 10)
        np.testing.assert_array_equal(est.X[:, [0, 2]], data.Y)

    def test_hidden_within_box(self):
        traj = np.zeros((10_000, 3))
        data = make_dataset(traj, (0, 2), 0.01)
        b = Bounds(np.full(3, -20.0), np.full(3, 20.0))
        est = init_states(data, b, 3, 10, hidden_box=(-20.0, 20.0))
        y = est.X[:, 1]
        assert y.min() >= -20 and y.max() <= 20
        # spread close to the uniform distribution's
        assert abs(y.std() - 40 / np.sqrt(12)) < 0.5


class TestGradientInit:
    def test_constant_series_gives_constant_hidden(self):
        data = make_dataset(np.full((40, 3), 2.0), (0, 2), 0.01)
        h = init_hidden_from_gradient(data, Bounds(np.full(3, -5.0), np.full(3, 5.0)), 4)
        assert np.all(h == h[0, 0]) and -5 <= h[0, 0] <= 5

    def test_deterministic(self):
        data = lorenz_hidden_y(200)
        b = default_bounds(data)
        assert init_hidden_from_gradient(data, b, 9).tobytes() == init_hidden_from_gradient(data, b, 9).tobytes()

    def test_semiconductor_path_in_bounds(self):
        pre = get_preset("semiconductor")
        data = pre.dataset(omega=0.01, seed=0)
        b = default_bounds(data)
        for seed in range(5):
            h = init_hidden_from_gradient(data, b, seed)
            lo, hi = b.hidden_box(2)
            assert h.shape == (data.n_points, 1)
            assert h.min() >= lo and h.max() <= hi

    def test_redraw_cap(self):
        t = np.linspace(0, 1, 50)
        # both measured columns rise by 100 while the hidden box is only 2 wide
        data = make_dataset(np.column_stack([100 * t, t, 100 * t]), (0, 2), t[1] - t[0])
        b = Bounds(np.full(3, -1.0), np.full(3, 1.0))
        with pytest.raises(RuntimeError):
            init_hidden_from_gradient(data, b, 0)

    def test_needs_measurement(self):
        data = make_dataset(np.zeros((10, 2)), (), 0.1)
        with pytest.raises(ValueError):
            init_hidden_from_gradient(data, Bounds(np.full(2, -1.0), np.full(2, 1.0)), 0)


class TestHardThreshold:
    def test_example(self):
        p, m = hard_threshold(np.array([3.8, -0.05, 0.2]), np.ones(3, bool), 0.1)
        np.testing.assert_array_equal(p, [3.8, 0.0, 0.2])
        np.testing.assert_array_equal(m, [True, False, True])

    def test_absolute_value(self):
        p, m = hard_threshold(np.array([-5.0, 5.0]), np.ones(2, bool), 1.0)
        np.testing.assert_array_equal(p, [-5.0, 5.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(0, 5))
    def test_properties(self, values, lam):
        p0 = np.array(values)
        mask0 = np.abs(p0) > 0.5
        p, m = hard_threshold(p0, mask0, lam)
        assert not np.any(m & ~mask0)              # never re-admits
        assert np.all(np.abs(p[m]) >= lam)
        assert np.all(p[~m] == 0)
        np.testing.assert_array_equal(p[m], p0[m])

    def test_zero_is_identity(self):
        p0 = np.array([1e-12, -3.0, 0.0])
        p, m = hard_threshold(p0, np.ones(3, bool), 0.0)
        np.testing.assert_array_equal(p, p0)
        assert m.all()


class TestAnnealOnce:
    def test_huge_lambda_gives_empty_model(self, lv):
        pre, data = lv
        tr = anneal_once(data, pre.model.library, 1e6, AnnealSchedule(beta_max=3), seed=0, settings=FAST)
        assert tr.model.n_terms == 0
        assert len(tr.actions) == 4

    def test_trace_shape_and_consistency(self, lv):
        pre, data = lv
        sch = AnnealSchedule(beta_max=10)
        tr = anneal_once(data, pre.model.library, 0.05, sch, seed=3, settings=FAST)
        assert tr.actions.shape == (11,)
        assert np.all(tr.model.params[~tr.model.mask] == 0)
        assert np.all(tr.model.params[tr.model.mask] != 0)
        assert tr.lam == 0.05 and tr.seed == 3 and tr.init == "uniform"

    def test_step_never_worse_than_warm_start(self, lv):
        # recompute the warm-start action of each step from the previous step's output
        pre, data = lv
        lib = pre.model.library
        sch = AnnealSchedule(beta_max=6)
        tr_prev = None
        for beta_max in range(1, 7):
            tr = anneal_once(data, lib, 0.05, AnnealSchedule(beta_max=beta_max), seed=2, settings=FAST)
            if tr_prev is not None:
                prob = ActionProblem(data, lib, tr_prev.model.mask, sch.rf_values[beta_max])
                warm = prob.value(prob.pack(tr_prev.estimate.X, tr_prev.model.params))
                assert tr.actions[-1] <= warm * (1 + 1e-12)
            tr_prev = tr

    def test_lotka_volterra_recovers_truth(self, lv):
        pre, data = lv
        tr = anneal_once(data, pre.model.library, 0.1, AnnealSchedule(), seed=1, settings=FAST)
        assert mask_key(tr.model.mask) == mask_key(pre.model.mask)
        np.testing.assert_allclose(tr.model.params[pre.model.mask], pre.model.params[pre.model.mask], rtol=0.05)

    def test_unknown_init(self, lv):
        pre, data = lv
        with pytest.raises(ValueError):
            anneal_once(data, pre.model.library, 0.1, AnnealSchedule(beta_max=1), init="magic")

    def test_optimizer_failure_has_context(self, lv):
        pre, data = lv
        bad = Bounds(np.full(2, 1.0), np.full(2, -1.0))
        with pytest.raises(RuntimeError, match="lambda=0.1"):
            anneal_once(data, pre.model.library, 0.1, AnnealSchedule(beta_max=1), bounds=bad, settings=FAST)

    def test_readmit_keeps_start_mask(self, lv):
        pre, data = lv
        tr = anneal_once(data, pre.model.library, 0.1, AnnealSchedule(beta_max=3, readmit=True),
                         seed=1, settings=FAST)
        assert tr.model.mask.all()

    def test_lorenz_action_plateau_soft(self):
        # soft check on the hidden-y Lorenz run: the last three actions agree to 1%
        pre = get_preset("lorenz")
        data = pre.dataset(omega=0.01, seed=1)
        b = default_bounds(data, param_bound=pre.param_bound)
        tr = anneal_once(data, pre.model.library, 0.1, AnnealSchedule(), seed=run_seed(0, 0), bounds=b,
                         settings=FAST, hidden_box=(-10.0, 10.0))
        last = tr.actions[-3:]
        spread = (last.max() - last.min()) / last.max()
        if spread > 0.01:
            pytest.xfail(f"action spread over the last three steps is {spread:.3g}")


class TestSweep:
    def test_single_run_single_structure(self, lv):
        pre, data = lv
        pool = dahsi_sweep(data, pre.model.library, AnnealSchedule(beta_max=5, lambdas=(0.1,)), 1,
                           settings=FAST)
        assert len(pool.entries) == 1 and len(pool.runs) == 1

    def test_multiplicities_and_report(self, lv):
        pre, data = lv
        sch = AnnealSchedule(beta_max=8, lambdas=(0.01, 0.1, 0.3))
        pool = dahsi_sweep(data, pre.model.library, sch, 3, base_seed=4, settings=FAST)
        assert sum(e.multiplicity for e in pool.entries.values()) == 9 - pool.failures
        rep = pool.to_dict()
        assert rep["runs"] == 9
        assert set(rep["structures"][0]) == {"mask", "best_action", "multiplicity", "term_count",
                                             "example_params"}
        actions = [s["best_action"] for s in rep["structures"]]
        assert actions == sorted(actions)

    def test_deterministic_across_workers(self, lv):
        pre, data = lv
        sch = AnnealSchedule(beta_max=5, lambdas=(0.05, 0.2))
        a = dahsi_sweep(data, pre.model.library, sch, 2, base_seed=7, settings=FAST, workers=1)
        b = dahsi_sweep(data, pre.model.library, sch, 2, base_seed=7, settings=FAST, workers=2)
        assert a.to_dict() == b.to_dict()

    def test_shared_initialisation_across_lambda(self):
        assert run_seed(3, 1) == run_seed(3, 1)
        assert len({run_seed(3, i) for i in range(50)}) == 50

    def test_failures_are_recorded(self, lv):
        pre, data = lv
        bad = Bounds(np.full(2, 1.0), np.full(2, -1.0))
        pool = dahsi_sweep(data, pre.model.library, AnnealSchedule(beta_max=1, lambdas=(0.1,)), 2,
                           bounds=bad, settings=FAST)
        assert pool.failures == 2 and not pool.entries

    @pytest.mark.parametrize("kw", [{"n_init": 0}, {"lambdas": ()}])
    def test_rejects(self, lv, kw):
        pre, data = lv
        sch = AnnealSchedule(beta_max=1, lambdas=kw.get("lambdas", (0.1,)))
        with pytest.raises(ValueError):
            dahsi_sweep(data, pre.model.library, sch, kw.get("n_init", 1))

    def test_empty_library_is_pure_persistence(self):
        data = lorenz_hidden_y(30)
        lib = FunctionLibrary(np.zeros((0, 3), int), 0)
        pool = dahsi_sweep(data, lib, AnnealSchedule(beta_max=2), 1, settings=FAST)
        assert len(pool.entries) == 1
        (entry,) = pool.entries.values()
        assert entry.term_count == 0 and np.isfinite(entry.best_action)

    def test_merge_is_order_independent(self, lv):
        pre, data = lv
        lib = pre.model.library
        p1 = dahsi_sweep(data, lib, AnnealSchedule(beta_max=4, lambdas=(0.05,)), 2, settings=FAST)
        p2 = dahsi_sweep(data, lib, AnnealSchedule(beta_max=4, lambdas=(0.5,)), 2, settings=FAST)

        def copy(p):
            return CandidatePool(lib).merge(p)

        a = copy(p1).merge(copy(p2)).to_dict()
        b = copy(p2).merge(copy(p1)).to_dict()
        assert a == b


@pytest.fixture(scope="module")
def pool(lv):
    pre, data = lv
    return dahsi_sweep(data, pre.model.library, AnnealSchedule(beta_max=8, lambdas=(0.01, 0.1, 1.0)), 2,
                       settings=FAST)


class TestDownSelectAndRefit:
    def test_cutoff_edges(self, pool):
        actions = [e.best_action for e in pool.entries.values()]
        assert down_select(pool, min(actions) * 0.5) == []
        assert len(down_select(pool, max(actions) * 2)) == len(pool.entries)
        with pytest.raises(ValueError):
            down_select(pool, 0.0)

    def test_refit_keeps_mask(self, lv):
        pre, data = lv
        mask = pre.model.mask.copy()
        mask[0, 0] = True
        model, trace = refit_parameters(mask, data, pre.model.library, AnnealSchedule(beta_max=8), seed=1,
                                        settings=FAST)
        assert not np.any(model.mask & ~mask)
        assert np.all(model.params[~mask] == 0)

    def test_refit_recovers_lotka_volterra(self, lv):
        pre, _ = lv
        data = pre.dataset(omega=0.0)
        model, _ = refit_parameters(pre.model.mask, data, pre.model.library, AnnealSchedule(), seed=0,
                                    settings=MinimizeSettings(max_iter=200, f_tol=1e-12))
        np.testing.assert_allclose(model.params[pre.model.mask], pre.model.params[pre.model.mask], rtol=1e-3)

    def test_refit_empty_mask_rejected(self, lv):
        pre, data = lv
        with pytest.raises(ValueError):
            refit_parameters(np.zeros_like(pre.model.mask), data, pre.model.library, AnnealSchedule())


class TestIterativeRefinement:
    def test_rounds_zero_rejected(self, lv):
        pre, data = lv
        with pytest.raises(ValueError):
            iterative_refinement(data, pre.model.library, AnnealSchedule(lambdas=(0.1,)), 0)

    def test_lotka_volterra_reaches_four_terms(self, lv):
        pre, data = lv
        best, history = iterative_refinement(data, pre.model.library,
                                             AnnealSchedule(lambdas=(0.01, 0.02, 0.05, 0.1)), 3,
                                             n_init=2, base_seed=1, settings=FAST)
        assert mask_key(best.mask) == mask_key(pre.model.mask)
        counts = [m.n_terms for m in history]
        assert counts == sorted(counts, reverse=True)

    def test_fixed_point_when_minimal(self, lv):
        pre, data = lv
        best, history = iterative_refinement(data, pre.model.library, AnnealSchedule(lambdas=(0.1,)), 5,
                                             allowed_mask=pre.model.mask, settings=FAST)
        assert len(history) == 1
        assert mask_key(best.mask) == mask_key(pre.model.mask)
