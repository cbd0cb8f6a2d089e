"""Allocator tests: penalty, surrogate conditions (tangency, bound,
gradient match, continuity), block updates against closed forms, full runs
with ascent and feasibility, and binarization repair."""

import math
from dataclasses import replace

import numpy as np
import pytest

from scma_alloc.allocators import (
    BslmTrace,
    SurrogateContext,
    binarize_and_repair,
    greedy_softened_init,
    initial_allocation,
    maxmin_surrogate_terms_F,
    maxmin_surrogate_terms_P,
    maxmin_surrogate_value_F,
    maxmin_surrogate_value_P,
    maxsr_surrogate_value_grad,
    penalized_min_rate,
    penalized_sum_rate,
    penalty,
    penalty_gradient,
    run_max_min,
    run_max_sr,
    theta_value_grad_F,
    theta_value_grad_P,
    update_F_maxmin,
    update_F_maxsr,
    update_P_maxmin,
    update_P_maxsr,
)
from scma_alloc.system import (
    Allocation,
    SystemConfig,
    rates_from_gain_power,
    validate_allocation,
)


def default_instance(seed=0):
    cfg = SystemConfig()
    rng = np.random.default_rng(seed)
    distance = rng.uniform(20.0, 300.0, cfg.J)
    habs2 = (
        np.abs(
            (rng.standard_normal((cfg.K, cfg.J)) + 1j * rng.standard_normal((cfg.K, cfg.J)))
            * np.sqrt(0.5)
        )
        ** 2
        / (1.0 + distance**4)[None, :]
    )
    return cfg, habs2


def context(cfg, habs2, seed=1):
    rng = np.random.default_rng(seed)
    F0, P0 = initial_allocation(cfg, rng)
    return SurrogateContext(F0, P0, habs2, cfg.sigma2, cfg.penalty_weight)


def fd_gradient(fn, X, h=1e-7):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        step = h * (1.0 + abs(X[idx]))
        Xp[idx] += step
        Xm[idx] -= step
        g[idx] = (fn(Xp) - fn(Xm)) / (2.0 * step)
    return g


def rel_gap(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


class TestPenalty:
    def test_binary_matrix_scores_zero(self):
        F = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert penalty(F, 20.0) == 0.0

    def test_all_half_default_scenario(self):
        assert penalty(np.full((4, 6), 0.5), 20.0) == pytest.approx(-120.0)

    def test_gradient_zero_at_half(self):
        np.testing.assert_allclose(penalty_gradient(np.full((3, 3), 0.5), 20.0), 0.0)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(2)
        F = rng.uniform(0.1, 0.9, (4, 6))
        fd = fd_gradient(lambda X: penalty(X, 20.0), F)
        assert rel_gap(penalty_gradient(F, 20.0), fd) <= 1e-6


class TestMaxSrSurrogate:
    def test_tangency_at_anchor(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        val, _ = maxsr_surrogate_value_grad(ctx.anchor_F, ctx)
        truth = penalized_sum_rate(habs2, ctx.anchor_F, ctx.anchor_P, cfg.sigma2, 20.0)
        assert abs(val - truth) <= 1e-12 * max(1.0, abs(truth))

    def test_lower_bound_everywhere(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            F, _ = initial_allocation(cfg, rng)
            val, _ = maxsr_surrogate_value_grad(F, ctx)
            truth = penalized_sum_rate(habs2, F, ctx.anchor_P, cfg.sigma2, 20.0)
            assert val <= truth + 1e-9

    def test_gradient_matches_fd_of_surrogate_and_of_objective(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        _, grad = maxsr_surrogate_value_grad(ctx.anchor_F, ctx)
        fd_sur = fd_gradient(lambda X: maxsr_surrogate_value_grad(X, ctx)[0], ctx.anchor_F)
        assert rel_gap(grad, fd_sur) <= 1e-5
        # gradient-match condition: surrogate gradient equals the penalized
        # objective's gradient at the anchor
        fd_obj = fd_gradient(
            lambda X: penalized_sum_rate(habs2, X, ctx.anchor_P, cfg.sigma2, 20.0),
            ctx.anchor_F,
        )
        assert rel_gap(grad, fd_obj) <= 1e-5


class TestThetaTerms:
    def test_first_user_sees_only_noise(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        val, grad = theta_value_grad_F(0, ctx.anchor_F, ctx)
        assert val == pytest.approx(cfg.K * math.log(cfg.sigma2), rel=1e-12)
        np.testing.assert_array_equal(grad, 0.0)

    def test_second_user_single_subcarrier_closed_form(self):
        cfg = SystemConfig(K=2, J=2, N=1, d_f=1, p_max_dbm=10.0)
        habs2 = np.array([[2.0, 1.0], [0.0, 0.0]])
        F = np.array([[0.5, 0.5], [0.25, 0.25]])
        P = np.array([[3.0, 1.0], [2.0, 1.0]]) * 1e-3
        ctx = SurrogateContext(F, P, habs2, cfg.sigma2, 20.0)
        _, grad = theta_value_grad_F(1, F, ctx)
        expected = habs2[0, 0] * P[0, 0] / (cfg.sigma2 + habs2[0, 0] * F[0, 0] * P[0, 0])
        assert grad[0, 0] == pytest.approx(expected, rel=1e-12)
        assert grad[0, 1] == 0.0 and grad[1, 1] == 0.0

    @pytest.mark.parametrize("user", [1, 3, 5])
    def test_gradients_match_fd(self, user):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        _, g_f = theta_value_grad_F(user, ctx.anchor_F, ctx)
        fd_f = fd_gradient(lambda X: theta_value_grad_F(user, X, ctx)[0], ctx.anchor_F)
        assert rel_gap(g_f, fd_f) <= 1e-5
        _, g_p = theta_value_grad_P(user, ctx.anchor_P, ctx)
        fd_p = fd_gradient(lambda X: theta_value_grad_P(user, X, ctx)[0], ctx.anchor_P)
        assert rel_gap(g_p, fd_p) <= 1e-5

    def test_gradient_columns_at_and_after_user_are_zero(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        _, grad = theta_value_grad_F(3, ctx.anchor_F, ctx)
        np.testing.assert_array_equal(grad[:, 3:], 0.0)


def branch_true_value_F(habs2, F, ctx, j, weight):
    """User j's exact SIC rate as a function of F (P at anchor), plus penalty."""
    rb = rates_from_gain_power(habs2, F, ctx.anchor_P, ctx.sigma2)
    return rb.per_user[j] + penalty(F, weight)


class TestMaxMinSurrogates:
    def test_branch_tangency(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        rates = rates_from_gain_power(habs2, ctx.anchor_F, ctx.anchor_P, cfg.sigma2).per_user
        terms_f = maxmin_surrogate_terms_F(ctx.anchor_F, ctx)
        terms_p = maxmin_surrogate_terms_P(ctx.anchor_P, ctx)
        assert np.max(np.abs(terms_f - rates)) <= 1e-10
        assert np.max(np.abs(terms_p - rates)) <= 1e-10

    def test_full_surrogate_tangency(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        truth = penalized_min_rate(habs2, ctx.anchor_F, ctx.anchor_P, cfg.sigma2, 20.0)
        assert abs(maxmin_surrogate_value_F(ctx.anchor_F, ctx) - truth) <= 1e-10
        assert abs(maxmin_surrogate_value_P(ctx.anchor_P, ctx) - truth) <= 1e-10

    def test_lower_bound_everywhere(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        rng = np.random.default_rng(4)
        for _ in range(1000):
            F, P = initial_allocation(cfg, rng)
            sur_f = maxmin_surrogate_value_F(F, ctx)
            truth_f = penalized_min_rate(habs2, F, ctx.anchor_P, cfg.sigma2, 20.0)
            assert sur_f <= truth_f + 1e-9
            sur_p = maxmin_surrogate_value_P(P, ctx)
            truth_p = penalized_min_rate(habs2, ctx.anchor_F, P, cfg.sigma2, 20.0)
            assert sur_p <= truth_p + 1e-9

    def test_branch_gradients_match_fd_of_true_branch(self):
        # gradient-match condition per user branch at the anchor
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        for j in (0, 2, 5):
            sur_grad = fd_gradient(
                lambda X: maxmin_surrogate_terms_F(X, ctx)[j] + penalty(ctx.anchor_F, 20.0)
                + float((penalty_gradient(ctx.anchor_F, 20.0) * (X - ctx.anchor_F)).sum()),
                ctx.anchor_F,
            )
            true_grad = fd_gradient(
                lambda X: branch_true_value_F(habs2, X, ctx, j, 20.0), ctx.anchor_F
            )
            assert rel_gap(sur_grad, true_grad) <= 1e-5

    def test_continuity_under_perturbation(self):
        cfg, habs2 = default_instance()
        ctx = context(cfg, habs2)
        base = maxmin_surrogate_value_F(ctx.anchor_F, ctx)
        rng = np.random.default_rng(5)
        direction = rng.standard_normal(ctx.anchor_F.shape)
        direction /= np.linalg.norm(direction)
        deltas = [1e-2, 1e-4, 1e-6, 1e-8]
        gaps = [
            abs(maxmin_surrogate_value_F(ctx.anchor_F + d * direction, ctx) - base)
            for d in deltas
        ]
        assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 1e-6


class TestBlockUpdates:
    @pytest.mark.parametrize("weight", [0.5, 20.0])
    def test_update_f_maxsr_matches_grid_oracle(self, weight):
        # two-variable instance solvable by brute grid search of the surrogate
        cfg = SystemConfig(K=2, J=1, N=1, d_f=1, p_max_dbm=10.0, penalty_weight=weight)
        pmax = cfg.p_max_w[0]
        habs2 = np.array([[3.0e-9], [1.0e-9]])
        anchor_F = np.array([[0.4], [0.4]])
        anchor_P = np.array([[pmax], [pmax]])
        ctx = SurrogateContext(anchor_F, anchor_P, habs2, cfg.sigma2, weight)
        F_new, res = update_F_maxsr(ctx, cfg)
        assert res.status == "converged"
        assert F_new[0, 0] >= F_new[1, 0]  # stronger subcarrier gets at least as much
        # grid oracle over the feasible triangle f1 + f2 <= 1, f in [0, 1]
        best = -np.inf
        for f1 in np.linspace(0, 1, 401):
            for f2 in np.linspace(0, 1 - f1, max(2, int(401 * (1 - f1)))):
                val, _ = maxsr_surrogate_value_grad(np.array([[f1], [f2]]), ctx)
                best = max(best, val)
        achieved, _ = maxsr_surrogate_value_grad(F_new, ctx)
        assert achieved >= best - 1e-3

    def test_update_f_degenerate_zero_objective(self):
        cfg = SystemConfig(penalty_weight=0.0)
        habs2 = np.zeros((4, 6))
        ctx = context(cfg, habs2)
        ctx = SurrogateContext(ctx.anchor_F, np.zeros((4, 6)), habs2, cfg.sigma2, 0.0)
        F_new, res = update_F_maxsr(ctx, cfg)
        assert res.status == "converged"
        alloc = Allocation(F_new, np.zeros((4, 6)))
        assert validate_allocation(alloc, cfg, tol=1e-8) == []
        assert res.value == pytest.approx(0.0, abs=1e-9)

    def test_update_p_equal_split_on_symmetric_channels(self):
        cfg = SystemConfig(K=4, J=1, N=2, d_f=1, p_max_dbm=10.0)
        pmax = cfg.p_max_w[0]
        habs2 = np.array([[2.0e-9], [2.0e-9], [0.0], [0.0]])
        F = np.array([[1.0], [1.0], [0.0], [0.0]])
        P0 = np.array([[0.2 * pmax], [0.5 * pmax], [0.0], [0.0]])
        ctx = SurrogateContext(F, P0, habs2, cfg.sigma2, 20.0)
        P_new, res = update_P_maxsr(ctx, cfg)
        assert P_new[0, 0] == pytest.approx(pmax / 2, rel=1e-3)
        assert P_new[1, 0] == pytest.approx(pmax / 2, rel=1e-3)

    def test_update_p_two_gain_water_filling_closed_form(self):
        cfg = SystemConfig(K=3, J=1, N=2, d_f=1, p_max_dbm=10.0)
        pmax = cfg.p_max_w[0]
        s2 = cfg.sigma2
        g1, g2 = 2.0e-12, 1.0e-12  # moderate SNR so both levels interior
        habs2 = np.array([[g1], [g2], [0.0]])
        F = np.array([[1.0], [1.0], [0.0]])
        ctx = SurrogateContext(F, np.array([[0.4], [0.4], [0.0]]) * pmax, habs2, s2, 20.0)
        P_new, _ = update_P_maxsr(ctx, cfg)
        # KKT: g/(s2 + g p) equal across subcarriers, p1 + p2 = pmax
        nu = 2.0 / (pmax + s2 / g1 + s2 / g2)
        exp1, exp2 = 1.0 / nu - s2 / g1, 1.0 / nu - s2 / g2
        assert P_new[0, 0] == pytest.approx(exp1, rel=1e-3)
        assert P_new[1, 0] == pytest.approx(exp2, rel=1e-3)

    def test_maxmin_single_user_reduces_to_maxsr(self):
        cfg = SystemConfig(K=4, J=1, N=2, d_f=1, p_max_dbm=10.0)
        rng = np.random.default_rng(6)
        habs2 = rng.uniform(0.5, 2.0, (4, 1)) * 1e-9
        F0 = np.full((4, 1), 0.4)
        P0 = np.full((4, 1), 0.2 * cfg.p_max_w[0])
        ctx = SurrogateContext(F0, P0, habs2, cfg.sigma2, 20.0)
        F_sr, _ = update_F_maxsr(ctx, cfg)
        F_mm, _ = update_F_maxmin(ctx, cfg)
        np.testing.assert_allclose(F_mm, F_sr, atol=2e-3)
        P_sr, _ = update_P_maxsr(ctx, cfg)
        P_mm, _ = update_P_maxmin(ctx, cfg)
        np.testing.assert_allclose(
            P_mm / cfg.p_max_w[0], P_sr / cfg.p_max_w[0], atol=2e-3
        )

    def test_block_updates_never_decrease_surrogate(self):
        cfg, habs2 = default_instance(seed=11)
        for seed in range(5):
            ctx = context(cfg, habs2, seed=seed)
            anchor_val = penalized_sum_rate(
                habs2, ctx.anchor_F, ctx.anchor_P, cfg.sigma2, 20.0
            )
            F_new, _ = update_F_maxsr(ctx, cfg)
            new_val = penalized_sum_rate(habs2, F_new, ctx.anchor_P, cfg.sigma2, 20.0)
            assert new_val >= anchor_val - cfg.solver_eps
            mm_anchor = penalized_min_rate(
                habs2, ctx.anchor_F, ctx.anchor_P, cfg.sigma2, 20.0
            )
            F_mm, _ = update_F_maxmin(ctx, cfg)
            mm_new = penalized_min_rate(habs2, F_mm, ctx.anchor_P, cfg.sigma2, 20.0)
            assert mm_new >= mm_anchor - cfg.solver_eps


class TestBinarizeAndRepair:
    def setup_method(self):
        self.cfg = SystemConfig()

    def test_binary_feasible_unchanged(self):
        from scma_alloc.system import canonical_factor_graph

        F = canonical_factor_graph(4, 2)
        habs2 = np.ones((4, 6))
        out = binarize_and_repair(F, self.cfg, habs2, np.ones((4, 6)) * 1e-3)
        np.testing.assert_array_equal(out, F)

    def test_threshold_keeps_dominant_entry(self):
        cfg = SystemConfig(K=2, J=2, N=1, d_f=1, p_max_dbm=10.0)
        F = np.array([[0.9, 0.1], [0.1, 0.9]])
        habs2 = np.ones((2, 2))
        out = binarize_and_repair(F, cfg, habs2, np.full((2, 2), 1e-3))
        np.testing.assert_array_equal(out, np.eye(2))

    def test_column_overfill_drops_least_valuable(self):
        cfg = SystemConfig(K=4, J=6, N=2, d_f=3)
        F = np.zeros((4, 6))
        F[:3, 0] = 0.8  # three candidate entries for a budget of two
        habs2 = np.zeros((4, 6))
        habs2[0, 0], habs2[1, 0], habs2[2, 0] = 5.0e-9, 4.0e-9, 1.0e-10
        P = np.full((4, 6), 1e-3)
        out = binarize_and_repair(F, cfg, habs2, P, objective="sum_rate")
        np.testing.assert_array_equal(out[:, 0], [1.0, 1.0, 0.0, 0.0])

    def test_row_overfill_repaired(self):
        cfg = SystemConfig(K=4, J=6, N=2, d_f=3)
        F = np.zeros((4, 6))
        F[0, :4] = 0.9  # four users on one subcarrier, cap is three
        habs2 = np.ones((4, 6)) * 1e-9
        habs2[0, 0] = 1e-12  # least valuable occupant
        out = binarize_and_repair(F, cfg, habs2, np.full((4, 6), 1e-3))
        assert out[0].sum() == 3.0
        assert out[0, 0] == 0.0

    def test_min_rate_criterion_accepted(self):
        cfg = SystemConfig(K=2, J=2, N=1, d_f=1, p_max_dbm=10.0)
        F = np.array([[0.9, 0.6], [0.1, 0.2]])
        habs2 = np.array([[2e-9, 1e-9], [1e-9, 3e-9]])
        out = binarize_and_repair(F, cfg, habs2, np.full((2, 2), 1e-3), objective="min_rate")
        assert validate_allocation(Allocation(out, np.zeros((2, 2))), cfg) == []


class TestRunMaxSr:
    def test_single_user_two_subcarriers_closed_form(self):
        cfg = SystemConfig(K=2, J=1, N=1, d_f=1, p_max_dbm=10.0)
        habs2 = np.array([[5.0e-10], [2.0e-10]])
        alloc, trace = run_max_sr(habs2, cfg, rng=np.random.default_rng(0))
        pmax = cfg.p_max_w[0]
        expected = math.log1p(pmax * habs2[0, 0] / cfg.sigma2)
        assert trace.final_objective == pytest.approx(expected, rel=1e-4)
        assert alloc.F[0, 0] == 1.0 and alloc.F[1, 0] == 0.0

    def test_three_inits_converge_fast_and_cluster(self):
        # the relaxed objective traces from different random starts settle
        # within a few percent of each other (distinct local optima)
        cfg, habs2 = default_instance(seed=21)
        finals = []
        for k in range(3):
            rng = np.random.default_rng([30, k])
            init = initial_allocation(cfg, rng)
            _, trace = run_max_sr(habs2, cfg, init=init)
            assert trace.converged and trace.cycles <= 10
            finals.append(trace.objective[-1])
        spread = (max(finals) - min(finals)) / max(finals)
        assert spread <= 0.10

    def test_zero_channel_terminates_at_zero_rate(self):
        cfg = SystemConfig()
        alloc, trace = run_max_sr(np.zeros((4, 6)), cfg, rng=np.random.default_rng(1))
        assert trace.final_objective == 0.0
        assert trace.cycles <= 3
        assert validate_allocation(alloc, cfg, binary_required=True) == []

    def test_penalized_objective_monotone(self):
        cfg, habs2 = default_instance(seed=22)
        _, trace = run_max_sr(habs2, cfg, rng=np.random.default_rng(2))
        seq = trace.penalized_objective
        assert all(b >= a - 1e-6 for a, b in zip(seq, seq[1:]))

    def test_intermediate_iterates_feasible(self):
        cfg, habs2 = default_instance(seed=23)
        _, trace = run_max_sr(habs2, cfg, rng=np.random.default_rng(3))
        assert max(trace.max_residual) <= 1e-8

    def test_final_allocation_binary_feasible(self):
        cfg, habs2 = default_instance(seed=24)
        alloc, _ = run_max_sr(habs2, cfg, rng=np.random.default_rng(4))
        assert validate_allocation(alloc, cfg, binary_required=True) == []

    def test_greedy_seed_never_below_greedy_baseline(self):
        from scma_alloc.baselines import oa
        from scma_alloc.system import rates_from_gain_power as rates

        cfg, habs2 = default_instance(seed=25)
        alloc, trace = run_max_sr(habs2, cfg, restarts=0, greedy_seed=True)
        base = oa(habs2, cfg)
        base_rate = rates(habs2, base.F, base.P, cfg.sigma2).total
        assert trace.final_objective >= base_rate - 1e-6


class TestRunMaxMin:
    def test_single_user_matches_max_sr(self):
        cfg = SystemConfig(K=2, J=1, N=1, d_f=1, p_max_dbm=10.0)
        habs2 = np.array([[5.0e-10], [2.0e-10]])
        _, tr_sr = run_max_sr(habs2, cfg, rng=np.random.default_rng(0))
        _, tr_mm = run_max_min(habs2, cfg, rng=np.random.default_rng(0))
        assert tr_mm.final_objective == pytest.approx(tr_sr.final_objective, rel=1e-4)

    def test_symmetric_two_user_instance_equalizes(self):
        cfg = SystemConfig(K=2, J=2, N=1, d_f=1, p_max_dbm=10.0)
        habs2 = np.full((2, 2), 1.0e-9)
        alloc, trace = run_max_min(habs2, cfg, rng=np.random.default_rng(5))
        rb = rates_from_gain_power(habs2, alloc.F, alloc.P, cfg.sigma2)
        assert abs(rb.per_user[0] - rb.per_user[1]) <= 1e-3
        c = rb.per_user
        jain = float(c.sum() ** 2 / (c.size * (c**2).sum()))
        assert jain >= 0.999

    def test_min_rate_not_below_max_sr_solution(self):
        cfg, habs2 = default_instance(seed=26)
        _, tr_mm = run_max_min(habs2, cfg, rng=np.random.default_rng(6), greedy_seed=True)
        _, tr_sr = run_max_sr(habs2, cfg, rng=np.random.default_rng(6), greedy_seed=True)
        alloc_sr, _ = run_max_sr(habs2, cfg, rng=np.random.default_rng(6), greedy_seed=True)
        sr_min = rates_from_gain_power(habs2, alloc_sr.F, alloc_sr.P, cfg.sigma2).per_user.min()
        assert tr_mm.final_objective >= sr_min - 1e-9

    def test_monotone_and_feasible(self):
        cfg, habs2 = default_instance(seed=27)
        alloc, trace = run_max_min(habs2, cfg, rng=np.random.default_rng(7))
        seq = trace.penalized_objective
        assert all(b >= a - 1e-6 for a, b in zip(seq, seq[1:]))
        assert max(trace.max_residual) <= 1e-8
        assert validate_allocation(alloc, cfg, binary_required=True) == []


class TestInitialAllocation:
    @pytest.mark.parametrize("seed", range(10))
    def test_strictly_feasible(self, seed):
        cfg = SystemConfig()
        F, P = initial_allocation(cfg, np.random.default_rng(seed))
        assert np.all(F > 0) and np.all(F < 1)
        assert np.all(F.sum(axis=0) <= cfg.N) and np.all(F.sum(axis=1) <= cfg.d_f)
        assert np.all(P > 0)
        assert np.all((F * P).sum(axis=0) <= cfg.p_max_w + 1e-15)

    def test_greedy_seed_feasible(self):
        cfg, habs2 = default_instance(seed=28)
        F, P = greedy_softened_init(habs2, cfg, "sum_rate")
        alloc = Allocation(F, P)
        assert validate_allocation(alloc, cfg, tol=1e-12) == []
        F2, P2 = greedy_softened_init(habs2, cfg, "min_rate")
        assert validate_allocation(Allocation(F2, P2), cfg, tol=1e-12) == []
