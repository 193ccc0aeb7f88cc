import math

import numpy as np
import pytest

from cachecran.dual import DualProblem, ellipsoid_solve
from cachecran.model import ChannelState, ContentState, SystemConfig, check_feasibility
from cachecran.oracle import Infeasible, TinyInstanceGuard, brute_force_optimum, convex_rate_program
from cachecran.recovery import best_recovery, build_residual, recover, solve_skeleton, tie_skeletons
from cachecran.scenario import generate_scenario

from conftest import tiny_config


def random_skeleton(rng, K, M, N, idle=0.2):
    users = rng.integers(0, K, N)
    users[rng.random(N) < idle] = -1
    sel = np.zeros((M, N))
    for n in np.flatnonzero(users >= 0):
        while not sel[:, n].any():
            sel[:, n] = rng.random(M) < 0.6
    return users, sel


def to_assignment(users, K):
    nu = np.zeros((K, users.size), dtype=np.int8)
    on = users >= 0
    nu[users[on], np.flatnonzero(on)] = 1
    return nu


def test_conic_route_matches_oracle_route(rng):
    """Two independent solvers of the fixed-skeleton power problem."""
    cfg = SystemConfig(3, 3, 8, 4, 20e6, 1e-13, 25e6, 15e6, 1)
    agree = both_feasible = 0
    for trial in range(60):
        sc = generate_scenario(cfg, trial, ("most_popular", "none")[trial % 2])
        users, sel = random_skeleton(rng, 3, 3, 8)
        mine = solve_skeleton(users, sel, sc.channel, sc.content, cfg)
        try:
            ref = convex_rate_program(to_assignment(users, 3), sel, sc.channel, sc.content, cfg)
        except Infeasible:
            ref = None
        assert mine.feasible == (ref is not None)
        if ref is not None:
            both_feasible += 1
            assert mine.power == pytest.approx(ref.total_power, rel=1e-6)
        agree += 1
    assert agree == 60 and both_feasible >= 10


def test_recovered_point_is_feasible(tiny):
    res = ellipsoid_solve(tiny.channel, tiny.content, tiny.config)
    rec = recover(res, tiny.channel, tiny.content, tiny.config)
    assert rec.feasible
    rep = check_feasibility(rec.allocation, tiny.content, tiny.channel, tiny.config)
    assert rep.feasible and rep.total_power == pytest.approx(rec.power, rel=1e-12)
    best = brute_force_optimum(tiny.channel, tiny.content, tiny.config, TinyInstanceGuard()).total_power
    assert res.g <= best * (1 + 1e-9) <= rec.power * (1 + 2e-9)
    assert rec.power <= 1.05 * best


def test_user_without_subchannel_is_infeasible(tiny):
    users = np.array([0, 0, 0, -1])
    sel = np.ones((2, 4))
    rec = solve_skeleton(users, sel, tiny.channel, tiny.content, tiny.config)
    assert not rec.feasible and "user 1" in rec.reason
    assert rec.power == math.inf


def test_fronthaul_infeasibility_is_reported():
    cfg = SystemConfig(1, 1, 2, 2, 20e6, 1e-13, 5e6, 10e6, 0)
    chan = ChannelState(np.full((1, 1, 2), 1e-5 + 0j))
    content = ContentState(np.zeros((1, 2)), [0])
    rec = solve_skeleton(np.array([0, 0]), np.ones((1, 2)), chan, content, cfg)
    assert not rec.feasible and "fronthaul" in rec.reason
    # cached at the RRH, the fronthaul no longer binds
    cached = ContentState(np.array([[1.0, 0.0]]), [0])
    assert solve_skeleton(np.array([0, 0]), np.ones((1, 2)), chan, cached, cfg.replace(cache_size=1)).feasible


def test_empty_interior_skeleton():
    """Capacity exactly equal to the load forced on it still solves."""
    cfg = SystemConfig(3, 3, 3, 3, 30e6, 1e-13, 60e6, 20e6, 0)
    rng = np.random.default_rng(4)
    h = 1e-5 * (rng.normal(size=(3, 3, 3)) + 1j * rng.normal(size=(3, 3, 3)))
    chan = ChannelState(h)
    content = ContentState(np.zeros((3, 3)), [0, 1, 2])
    users = np.array([0, 1, 2])
    sel = np.ones((3, 3))
    # each RRH carries all three 20 Mbps streams: 60 Mbps, its full capacity
    rec = solve_skeleton(users, sel, chan, content, cfg)
    assert rec.feasible
    G = np.array([np.sum(np.abs(h[k, :, k]) ** 2) for k in range(3)]) / cfg.noise_power
    expected = np.sum((2.0 ** (20e6 / 10e6) - 1) / G)
    assert rec.power == pytest.approx(expected, rel=1e-7)
    rep = check_feasibility(rec.allocation, content, chan, cfg)
    assert rep.fronthaul_loads == pytest.approx([60e6] * 3, rel=1e-7)


def test_shared_content_uses_one_stream():
    """Two users on the same content through one RRH load its link once."""
    cfg = SystemConfig(1, 2, 2, 2, 20e6, 1e-13, 20e6, 15e6, 0)
    chan = ChannelState(np.full((2, 1, 2), 1e-5 + 0j))
    content = ContentState(np.zeros((1, 2)), [1, 1])
    rp = build_residual(np.array([0, 1]), np.ones((1, 2)), chan, content, cfg)
    assert rp.num_epigraph == 1
    assert solve_skeleton(np.array([0, 1]), np.ones((1, 2)), chan, content, cfg).feasible
    distinct = ContentState(np.zeros((1, 2)), [0, 1])
    assert not solve_skeleton(np.array([0, 1]), np.ones((1, 2)), chan, distinct, cfg).feasible


def test_best_recovery_deduplicates_and_picks_cheapest(tiny):
    a = (np.array([0, 1, 0, 1]), np.ones((2, 4)))
    b = (np.array([0, 1, 0, 1]), np.array([[1, 1, 1, 1], [0, 0, 0, 0]]))
    ra = solve_skeleton(*a, tiny.channel, tiny.content, tiny.config)
    rb = solve_skeleton(*b, tiny.channel, tiny.content, tiny.config)
    best = best_recovery([a, b, a], tiny.channel, tiny.content, tiny.config)
    assert best.power == min(ra.power, rb.power)
    bad = (np.array([0, 0, 0, 0]), np.ones((2, 4)))
    assert not best_recovery([bad], tiny.channel, tiny.content, tiny.config).feasible
    assert best_recovery([], tiny.channel, tiny.content, tiny.config).reason == "no candidate skeleton"


def test_tie_skeletons_use_near_minimisers(tiny):
    res = ellipsoid_solve(tiny.channel, tiny.content, tiny.config)
    pb = DualProblem(tiny.channel, tiny.content, tiny.config)
    table = pb.option_table(res.dual)
    skel = tie_skeletons(table, res.g, tiny.content, tiny.config, max_round=8)
    assert 1 <= len(skel) <= 8
    window = 1e-3 * abs(res.g) / tiny.config.num_subchannels
    vmin = table.value.min(axis=1)
    for users, sel in skel:
        for n in range(tiny.config.num_subchannels):
            match = [o for o in range(table.users.size)
                     if table.users[o] == users[n] and np.array_equal(table.selection[n, o], sel[:, n])]
            assert match and table.value[n, match[0]] <= vmin[n] + window
