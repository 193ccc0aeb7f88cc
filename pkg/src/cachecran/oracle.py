"""Brute-force global solver for tiny instances.

Enumerates every integer skeleton (user per SC, RRH subset per SC) and
solves each restriction, a convex program in per-SC spectral efficiencies,
to certified optimality. Meant as ground truth for tests, not for scale.

The restricted program is formulated independently of
:mod:`cachecran.recovery`: the per-content ``max`` in the fronthaul
constraint is expanded into one linear row per choice of serving user
(instead of epigraph variables) and solved by SLSQP with an active-set
Newton polish and a KKT residual check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np
from scipy.optimize import linprog, minimize, nnls

from .model import Allocation, ChannelState, ContentState, SystemConfig

LN2 = math.log(2.0)


class GuardExceeded(Exception):
    def __init__(self, count: int, limit: int):
        super().__init__(f"instance needs {count} skeletons, limit is {limit}")
        self.count = count
        self.limit = limit


class Infeasible(Exception):
    pass


@dataclass(frozen=True)
class TinyInstanceGuard:
    limit: int = 10 ** 7

    def count(self, cfg: SystemConfig) -> int:
        return (1 + cfg.num_users * 2 ** cfg.num_rrhs) ** cfg.num_subchannels

    def check(self, cfg: SystemConfig) -> int:
        c = self.count(cfg)
        if c > self.limit:
            raise GuardExceeded(c, self.limit)
        return c


def _sc_choices(K: int, M: int):
    """Per-SC options in enumeration order: idle, then (user, subset bits)."""
    return [(-1, 0)] + [(k, s) for k in range(K) for s in range(2 ** M)]


def enumerate_skeletons(cfg: SystemConfig, guard: TinyInstanceGuard = TinyInstanceGuard()
                        ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield every ``(assignment (K, N), selection (M, N))`` exactly once."""
    guard.check(cfg)
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    bits = np.arange(M)
    for combo in itertools.product(_sc_choices(K, M), repeat=N):
        nu = np.zeros((K, N), dtype=np.int8)
        alpha = np.zeros((M, N), dtype=np.int8)
        for n, (k, s) in enumerate(combo):
            if k >= 0:
                nu[k, n] = 1
                alpha[:, n] = (s >> bits) & 1
        yield nu, alpha


@dataclass
class RateSolution:
    rates: np.ndarray  # bits/s per SC (zero on idle SCs)
    power: np.ndarray  # (M, N)
    total_power: float
    kkt_residual: float


def _restriction(nu, alpha, chan: ChannelState, content: ContentState, cfg: SystemConfig):
    """Linear data ``A s <= b`` over active SCs, plus gains and SC ids."""
    nu = np.asarray(nu)
    alpha = np.asarray(alpha, dtype=float)
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    w = cfg.bandwidth / N
    gains = np.abs(chan.h) ** 2 / cfg.noise_power
    user_of = np.full(N, -1)
    for k, n in zip(*np.nonzero(nu)):
        if user_of[n] >= 0:
            raise ValueError(f"subchannel {n} assigned to two users")
        user_of[n] = k
    G = np.array([gains[user_of[n], :, n] @ alpha[:, n] if user_of[n] >= 0 else 0.0 for n in range(N)])
    act = np.flatnonzero(G > 0)
    J = act.size
    rows, rhs = [], []
    for k in range(K):
        rows.append(-(user_of[act] == k).astype(float))
        rhs.append(-cfg.min_rate[k] / w)
    for m in range(M):
        groups = []
        for f in sorted(set(content.requested.tolist())):
            if content.cache[m, f]:
                continue
            loads = [((user_of[act] == k) & (alpha[m, act] > 0)).astype(float)
                     for k in np.flatnonzero(content.requested == f)]
            loads = [v for v in loads if v.any()]
            if loads:
                groups.append(loads)
        for pick in itertools.product(*groups):
            if pick:
                rows.append(np.sum(pick, axis=0))
                rhs.append(cfg.fronthaul_capacity[m] / w)
    A = np.array(rows, dtype=float).reshape(len(rows), J)
    return A, np.array(rhs), G[act], act, user_of


def convex_rate_program(nu, alpha, chan: ChannelState, content: ContentState,
                        cfg: SystemConfig, kkt_tol: float = 1e-8) -> RateSolution:
    """Certified optimum of the power problem with ``(nu, alpha)`` fixed.

    Raises :class:`Infeasible` when no rate vector satisfies the constraints,
    and ``RuntimeError`` if optimality cannot be certified to ``kkt_tol``.
    """
    A, b, G, act, user_of = _restriction(nu, alpha, chan, content, cfg)
    J = act.size
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    for k in range(K):
        if not np.any(user_of[act] == k):
            raise Infeasible(f"user {k} has no active subchannel")
    # feasibility by LP, which also gives the SLSQP start
    lp = linprog(np.zeros(J), A_ub=A, b_ub=b, bounds=[(0, None)] * J, method="highs")
    if lp.status == 2:
        raise Infeasible("rate and fronthaul constraints are inconsistent")
    if lp.status != 0:
        raise RuntimeError(f"feasibility LP failed: {lp.message}")

    c = 1.0 / G
    cs = c / c.max()
    f = lambda s: float(np.sum(cs * np.expm1(LN2 * s)))
    grad = lambda s: cs * LN2 * np.exp2(s)
    cons = [{"type": "ineq", "fun": lambda s: b - A @ s, "jac": lambda s: -A}]
    res = minimize(f, lp.x, jac=grad, bounds=[(0, None)] * J, constraints=cons,
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    s = np.clip(res.x, 0.0, None)
    s = _polish(s, A, b, cs)
    resid = _kkt_residual(s, A, b, cs)
    if resid > kkt_tol:
        raise RuntimeError(f"restricted program not certified: KKT residual {resid:.2e}")

    rates = np.zeros(N)
    rates[act] = s * cfg.bandwidth / N
    power = np.zeros((M, N))
    gains = np.abs(chan.h) ** 2 / cfg.noise_power
    alpha = np.asarray(alpha, dtype=float)
    for j, n in enumerate(act):
        wgt = gains[user_of[n], :, n] * alpha[:, n]
        power[:, n] = np.expm1(LN2 * s[j]) * wgt / G[j] ** 2
    return RateSolution(rates, power, float(power.sum()), resid)


def _constraints(A, b):
    J = A.shape[1]
    return np.vstack([A, -np.eye(J)]), np.concatenate([b, np.zeros(J)])


def _polish(s, A, b, cs, iters: int = 30):
    """Newton steps on the equality system of the active constraints."""
    Aall, ball = _constraints(A, b)
    scale = np.maximum(1.0, np.abs(ball))
    for _ in range(iters):
        slack = (ball - Aall @ s) / scale
        act = slack <= 1e-7
        Aa, ba = Aall[act], ball[act]
        if Aa.size:
            Aa, keep = _independent_rows(Aa)
            ba = ba[keep]
        g = cs * LN2 * np.exp2(s)
        h = cs * LN2 * LN2 * np.exp2(s)
        na = Aa.shape[0]
        J = s.size
        kkt = np.zeros((J + na, J + na))
        kkt[np.arange(J), np.arange(J)] = h
        kkt[:J, J:] = Aa.T
        kkt[J:, :J] = Aa
        rhs = -np.concatenate([g, Aa @ s - ba])
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            break
        ds = step[:J]
        # keep inactive constraints satisfied
        t = 1.0
        Ad = Aall @ ds
        gap = ball - Aall @ s
        grow = (Ad > 0) & ~act
        if grow.any():
            t = min(1.0, float(np.min(gap[grow] / Ad[grow])))
        s = s + t * ds
        if np.linalg.norm(ds) <= 1e-14 * max(1.0, np.linalg.norm(s)):
            break
    return s


def _independent_rows(A, tol: float = 1e-10):
    keep = []
    for i in range(A.shape[0]):
        trial = A[keep + [i]]
        if np.linalg.matrix_rank(trial, tol) == len(keep) + 1:
            keep.append(i)
    return A[keep], np.array(keep, dtype=int)


def _kkt_residual(s, A, b, cs) -> float:
    """Relative stationarity + feasibility + complementarity residual."""
    Aall, ball = _constraints(A, b)
    scale = np.maximum(1.0, np.abs(ball))
    slack = (ball - Aall @ s) / scale
    infeas = float(max(0.0, -slack.min())) if slack.size else 0.0
    g = cs * LN2 * np.exp2(s)
    act = slack <= 1e-7
    if act.any():
        lam, _ = nnls(Aall[act].T, -g)
        stat = np.linalg.norm(g + Aall[act].T @ lam) / np.linalg.norm(g)
    else:
        stat = 1.0  # objective is strictly increasing: some constraint must bind
    return max(stat, infeas)


@dataclass
class OracleResult:
    allocation: Allocation
    total_power: float
    skeletons: int  # skeletons enumerated
    solved: int  # restricted programs actually solved


def _waterfill_bound(G, need):
    """min sum (2^s - 1)/G s.t. sum s = need, s >= 0 (fronthaul dropped)."""
    lg = np.sort(np.log2(G))[::-1]
    for j in range(lg.size, 0, -1):
        level = (need - lg[:j].sum()) / j
        if level + lg[j - 1] > 0:
            s = level + lg[:j]
            return float(np.sum(np.expm1(LN2 * s) / np.exp2(lg[:j])))
    return 0.0


def brute_force_optimum(chan: ChannelState, content: ContentState, cfg: SystemConfig,
                        guard: TinyInstanceGuard = TinyInstanceGuard()) -> OracleResult:
    """Global minimum-power allocation over all skeletons.

    Skeletons are visited in order of a fronthaul-free lower bound, and the
    scan stops once that bound exceeds the incumbent, so only restrictions
    that could still win are solved. A user placed on an SC with no RRH is
    the same as leaving the SC idle and is not solved twice.
    """
    total = guard.check(cfg)
    chan.check(cfg)
    content.check(cfg)
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    gains = np.abs(chan.h) ** 2 / cfg.noise_power
    need = cfg.min_rate / (cfg.bandwidth / N)
    choices = [(-1, 0)] + [(k, s) for k in range(K) for s in range(1, 2 ** M)]
    bits = np.arange(M)
    Gtab = np.array([[[gains[k, :, n] @ ((s >> bits) & 1) for s in range(2 ** M)] for k in range(K)]
                     for n in range(N)])  # (N, K, 2^M)

    cands = []
    for combo in itertools.product(range(len(choices)), repeat=N):
        users = [choices[c][0] for c in combo]
        lb = 0.0
        ok = True
        for k in range(K):
            Gk = [Gtab[n, k, choices[c][1]] for n, c in enumerate(combo) if users[n] == k]
            Gk = [g for g in Gk if g > 0]
            if not Gk:
                ok = False
                break
            lb += _waterfill_bound(np.array(Gk), need[k])
        if ok:
            cands.append((lb, combo))
    cands.sort(key=lambda t: (t[0], t[1]))

    best, best_key, best_sol, solved = math.inf, None, None, 0
    for lb, combo in cands:
        if lb > best * (1 + 1e-10):
            break
        nu = np.zeros((K, N), dtype=np.int8)
        alpha = np.zeros((M, N), dtype=np.int8)
        for n, c in enumerate(combo):
            k, s = choices[c]
            if k >= 0:
                nu[k, n] = 1
                alpha[:, n] = (s >> bits) & 1
        try:
            sol = convex_rate_program(nu, alpha, chan, content, cfg)
        except Infeasible:
            continue
        finally:
            solved += 1
        p = sol.total_power
        if best_key is None or p < best - 1e-10 * best or (p <= best + 1e-10 * best and combo < best_key):
            best, best_key, best_sol = p, combo, (nu, alpha, sol)
    if best_sol is None:
        raise Infeasible("no skeleton admits a feasible allocation")
    nu, alpha, sol = best_sol
    alloc = Allocation(nu, alpha, sol.power, np.zeros((M, cfg.num_contents)))
    return OracleResult(alloc, best, total, solved)
