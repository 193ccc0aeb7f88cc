import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from cachecran.dual import (
    DualProblem, DualState, EllipsoidState, all_selections, dual_value, ellipsoid_solve,
    fixed_user_objective, per_sc_subproblem, power_alloc_prop1, solve_g2, subgradient,
)
from cachecran.model import ContentState, SystemConfig
from cachecran.oracle import TinyInstanceGuard, brute_force_optimum
from cachecran.scenario import generate_scenario

from conftest import desk_config, tiny_config


def random_dual(pb, rng, spread=2.0):
    """Dual point around the problem's natural scale, with some exact zeros."""
    x = pb.dual_scale() * np.exp(rng.normal(0.0, spread, pb.dim))
    x[rng.random(pb.dim) < 0.2] = 0.0
    return pb.dual(x)


def numeric_min(user, sel, dual, sc, n):
    """Minimise the per-SC term along the gain-proportional power direction.

    For a fixed total power the SNR is largest with powers proportional to
    ``alpha_m |h_m|^2``, so a 1-D search over the total finds the minimum.
    """
    cfg, chan, content = sc.config, sc.channel, sc.content
    g = np.abs(chan.h[user, :, n]) ** 2 * np.asarray(sel, float)
    if g.sum() == 0:
        return 0.0, 0.0
    direction = g / g.sum()
    f = lambda P: fixed_user_objective(P * direction, user, sel, dual, chan, content, cfg, n)
    lam = dual.lam_matrix(cfg.num_rrhs)[:, user] * content.uncached[:, user]
    weight = dual.mu[user] / cfg.min_rate[user] - np.sum(np.asarray(sel) * lam / cfg.fronthaul_capacity)
    # the derivative is positive for P >= weight * B / (N ln 2)
    upper = max(weight * cfg.subchannel_bandwidth / math.log(2), 0.0)
    if upper == 0.0:
        return 0.0, f(0.0)
    res = minimize_scalar(f, bounds=(0.0, 2 * upper), method="bounded",
                          options={"xatol": 1e-13 * upper, "maxiter": 2000})
    cands = [(res.fun, res.x), (f(0.0), 0.0)]
    return min(cands)[1], min(cands)[0]


class TestPowerAllocation:
    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), n=st.integers(0, 15), user=st.integers(0, 3),
           mask=st.integers(1, 7), spread=st.sampled_from([0.5, 2.0]))
    def test_matches_numeric_minimum(self, seed, n, user, mask, spread):
        sc = generate_scenario(desk_config(), seed % 1000, "probabilistic")
        pb = DualProblem(sc.channel, sc.content, sc.config)
        dual = random_dual(pb, np.random.default_rng(seed), spread)
        sel = all_selections(3)[mask]
        p = power_alloc_prop1(user, sel, dual, sc.channel, sc.content, sc.config, n)
        v = fixed_user_objective(p, user, sel, dual, sc.channel, sc.content, sc.config, n)
        _, v_num = numeric_min(user, sel, dual, sc, n)
        scale = max(abs(v_num), 1e-3 * np.sum(p) + 1e-30)
        assert v <= v_num + 1e-9 * scale
        assert v == pytest.approx(v_num, rel=1e-6, abs=1e-6 * scale)

    def test_threshold_is_exact(self, desk):
        """Power switches on exactly when ``F G`` exceeds ``N ln2 / B``."""
        cfg, chan, content = desk.config, desk.channel, desk.content
        user, n, sel = 1, 5, np.array([1.0, 0.0, 0.0])
        pb = DualProblem(chan, content, cfg)
        dual0 = pb.dual(np.zeros(pb.dim))
        G = np.abs(chan.h[user, 0, n]) ** 2 / cfg.noise_power
        mu_star = cfg.min_rate[user] * cfg.num_subchannels * math.log(2) / (cfg.bandwidth * G)
        mu = dual0.mu.copy()
        for factor, positive in [(1 - 1e-9, False), (1.0, False), (1 + 1e-9, True)]:
            mu[user] = mu_star * factor
            d = DualState(dual0.lam, mu, dual0.pairs)
            p = power_alloc_prop1(user, sel, d, chan, content, cfg, n)
            assert (p.sum() > 0) == positive
            assert np.all(p[1:] == 0)

    def test_empty_subset_has_no_power(self, desk):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        p = power_alloc_prop1(0, np.zeros(3), random_dual(pb, np.random.default_rng(0)),
                              desk.channel, desk.content, desk.config, 0)
        assert p.tolist() == [0.0, 0.0, 0.0]

    def test_split_is_gain_proportional(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        x = pb.dual_scale() * 10
        x[: pb.C] = 0.0
        dual = pb.dual(x)
        p = power_alloc_prop1(2, np.ones(3), dual, desk.channel, desk.content, desk.config, 7)
        g = np.abs(desk.channel.h[2, :, 7]) ** 2
        assert p.sum() > 0
        assert p / p.sum() == pytest.approx(g / g.sum(), rel=1e-12)


def g2_by_vertices(dual, content, cfg):
    """Enumerate vertices of each RRH's share simplex {rho >= 0, sum rho <= 1}."""
    lam = dual.lam_matrix(cfg.num_rrhs)
    best_val, best_share = None, None
    vertices = [None] + list(range(cfg.num_contents))
    for combo in itertools.product(vertices, repeat=cfg.num_rrhs):
        share = np.zeros((cfg.num_rrhs, cfg.num_contents))
        for m, f in enumerate(combo):
            if f is not None:
                share[m, f] = 1.0
        val = 0.0
        for m, k in dual.pairs:
            val -= lam[m, k] * share[m, content.requested[k]]
        if best_val is None or val < best_val:
            best_val, best_share = val, share
    return best_share, best_val


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_g2_matches_vertex_enumeration(data):
    M, K, F = 3, 5, 4
    cfg = SystemConfig(M, K, 4, F, 1e6, 1e-12, 1e6, 1e5, 1)
    requested = data.draw(st.lists(st.integers(0, F - 1), min_size=K, max_size=K))
    cached = data.draw(st.lists(st.integers(0, F - 1), min_size=M, max_size=M))
    cache = np.zeros((M, F))
    cache[np.arange(M), cached] = 1
    content = ContentState(cache, requested)
    pairs = DualState.pairs_for(content)
    # dyadic values keep every sum exact, so ties are real ties
    lam = np.array(data.draw(st.lists(st.integers(0, 6), min_size=len(pairs), max_size=len(pairs)))) / 8.0
    dual = DualState(lam, np.ones(K), pairs)
    share, g2 = solve_g2(dual, content, cfg)
    ref_share, ref = g2_by_vertices(dual, content, cfg)
    assert g2 == ref
    assert np.array_equal(share, ref_share)


class TestDualFunction:
    def test_concave_along_segments(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        for _ in range(200):
            a, b = random_dual(pb, rng), random_dual(pb, rng)
            t = rng.random()
            mid = pb.dual(t * a.vector + (1 - t) * b.vector)
            ga, gb, gm = (pb.evaluate(d)[0] for d in (a, b, mid))
            scale = max(abs(ga), abs(gb), abs(gm))
            assert gm >= t * ga + (1 - t) * gb - 1e-9 * scale

    def test_supergradient_inequality(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        for _ in range(200):
            x, y = random_dual(pb, rng), random_dual(pb, rng)
            gx, sol = pb.evaluate(x)
            d = pb.subgradient(x, sol)
            gy = pb.evaluate(y)[0]
            scale = max(abs(gx), abs(gy), float(np.abs(d * (y.vector - x.vector)).sum()))
            assert gy <= gx + d @ (y.vector - x.vector) + 1e-9 * scale

    def test_value_is_sum_of_parts(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        dual = random_dual(pb, rng)
        g, sol = dual_value(dual, "exhaustive", desk.channel, desk.content, desk.config)
        assert g == pytest.approx(sol.g1 + sol.g2 + dual.mu.sum(), rel=1e-14)
        for n in (0, 9):
            k, sel, p, v = per_sc_subproblem(n, dual, "exhaustive", desk.channel, desk.content, desk.config)
            assert v == sol.values[n]
            if k is None:
                assert v == 0.0 and p.sum() == 0.0
            else:
                direct = fixed_user_objective(p, k, sel, dual, desk.channel, desk.content, desk.config, n)
                assert direct == pytest.approx(v, rel=1e-9, abs=1e-12 * abs(g))
        d = subgradient(dual, sol, desk.channel, desk.content, desk.config)
        assert np.array_equal(d, pb.subgradient(dual, sol))

    def test_exhaustive_never_worse_than_greedy(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        for _ in range(100):
            dual = random_dual(pb, rng)
            ve = pb.solve_subchannels(dual, "exhaustive")[3]
            vg = pb.solve_subchannels(dual, "greedy")[3]
            assert np.all(ve <= vg)

    def test_exhaustive_is_per_sc_minimum(self, tiny, rng):
        """Explicit loop over users and subsets, evaluated with the closed form."""
        cfg, chan, content = tiny.config, tiny.channel, tiny.content
        pb = DualProblem(chan, content, cfg)
        for _ in range(20):
            dual = random_dual(pb, rng, 1.0)
            _, _, _, values, _ = pb.solve_subchannels(dual)
            for n in range(cfg.num_subchannels):
                best = 0.0
                for k in range(cfg.num_users):
                    for sel in all_selections(cfg.num_rrhs)[1:]:
                        p = power_alloc_prop1(k, sel, dual, chan, content, cfg, n)
                        best = min(best, fixed_user_objective(p, k, sel, dual, chan, content, cfg, n))
                assert values[n] == pytest.approx(best, rel=1e-9, abs=1e-15)

    def test_option_table_consistent(self, desk, rng):
        pb = DualProblem(desk.channel, desk.content, desk.config)
        dual = random_dual(pb, rng)
        values = pb.solve_subchannels(dual)[3]
        table = pb.option_table(dual)
        assert table.value.shape == (16, 1 + 4 * 7)
        assert np.allclose(table.value.min(axis=1), values, rtol=0, atol=0)
        greedy = pb.option_table(dual, "greedy")
        assert np.all(greedy.value.min(axis=1) >= values)
        assert np.all(table.rate[:, 0] == 0) and np.all(table.power[:, 0] == 0)
        assert np.all(table.rate[table.power == 0] == 0)


def test_weak_duality_against_oracle(rng):
    for seed in range(4):
        sc = generate_scenario(tiny_config(), seed, "probabilistic")
        best = brute_force_optimum(sc.channel, sc.content, sc.config, TinyInstanceGuard()).total_power
        pb = DualProblem(sc.channel, sc.content, sc.config)
        for _ in range(50):
            assert pb.evaluate(random_dual(pb, rng, 3.0))[0] <= best * (1 + 1e-9)


class TestDualState:
    def test_index_is_a_bijection(self, desk):
        dual = DualState.zeros(desk.content)
        seen = set()
        for m in range(3):
            for k in range(4):
                if desk.content.uncached[m, k]:
                    seen.add(dual.index(m, k))
                else:
                    with pytest.raises(KeyError):
                        dual.index(m, k)
        assert seen == set(range(dual.lam.size))

    def test_vector_round_trip(self, desk, rng):
        pairs = DualState.pairs_for(desk.content)
        x = rng.random(len(pairs) + 4)
        d = DualState.from_vector(x, desk.content)
        assert np.array_equal(d.vector, x)
        lm = d.lam_matrix(3)
        assert np.all(lm[~desk.content.uncached] == 0)
        for i, (m, k) in enumerate(pairs):
            assert lm[m, k] == x[i]

    def test_rejects_negative(self, desk):
        pairs = DualState.pairs_for(desk.content)
        with pytest.raises(ValueError):
            DualState(-np.ones(len(pairs)), np.zeros(4), pairs)
        with pytest.raises(ValueError):
            DualState(np.zeros(len(pairs) + 1), np.zeros(4), pairs)


class TestEllipsoid:
    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 6), seed=st.integers(0, 2 ** 31), depth=st.floats(0.0, 0.9))
    def test_cut_keeps_halfspace_part(self, n, seed, depth):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(n, n))
        P = A @ A.T + 0.1 * np.eye(n)
        c = rng.normal(size=n)
        a = rng.normal(size=n)
        ell = EllipsoidState(c.copy(), P.copy())
        d = depth * math.sqrt(a @ P @ a)
        assert ell.cut(a, d)
        ell.check()
        # points of the old ellipsoid on the kept side lie in the new one
        L = np.linalg.cholesky(P)
        z = rng.normal(size=(2000, n))
        z *= (rng.random((2000, 1)) ** (1 / n)) / np.linalg.norm(z, axis=1, keepdims=True)
        pts = c + z @ L.T
        kept = pts[(pts - c) @ a <= -d]
        Q = np.linalg.inv(ell.shape)
        r = np.einsum("ij,jk,ik->i", kept - ell.center, Q, kept - ell.center)
        assert np.all(r <= 1 + 1e-9)
        assert np.linalg.det(ell.shape) < np.linalg.det(P)

    def test_one_dimensional_cut_is_exact(self):
        ell = EllipsoidState(np.array([0.0]), np.array([[4.0]]))
        assert ell.cut(np.array([1.0]), 1.0)  # keep [-2, -1]
        assert ell.center[0] == pytest.approx(-1.5)
        assert ell.shape[0, 0] == pytest.approx(0.25)
        assert not ell.cut(np.array([-1.0]), 2.0)

    def test_solve_tiny(self, tiny):
        res = ellipsoid_solve(tiny.channel, tiny.content, tiny.config)
        best = brute_force_optimum(tiny.channel, tiny.content, tiny.config, TinyInstanceGuard()).total_power
        assert res.converged
        assert res.g <= best * (1 + 1e-9)
        assert np.all(np.diff(res.best_trajectory) >= 0)
        assert res.best_trajectory[-1] == res.g
        assert len(res.trajectory) == res.iterations
        assert 1 <= len(res.candidates) <= 32

    def test_iteration_cap_reports_unconverged(self, desk):
        res = ellipsoid_solve(desk.channel, desk.content, desk.config, max_iter=3)
        assert not res.converged and res.iterations == 3
