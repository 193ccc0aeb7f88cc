"""Primal recovery: powers for a fixed assignment/selection skeleton.

With users and RRH subsets fixed, the remaining problem in per-SC spectral
efficiencies ``s_n = r_n / (B/N)`` is convex:

    minimise   sum_n (2^{s_n} - 1) / G_n
    subject to sum_{n in N_k} s_n >= Rmin_k / (B/N)                 every user
               sum_f max_{k: f_k = f} sum_{n in N_k, m in A_n} s_n
                   <= Rbar_m / (B/N)                              every RRH
               s >= 0

Shared contents enter through epigraph variables ``t_mf``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import clarabel
from scipy import sparse
from scipy.optimize import linprog

from .dual import DualProblem, OptionTable
from .model import (Allocation, ChannelState, ContentState, SystemConfig, check_feasibility,
                    min_power_for_rate, rate_matrix)

LN2 = math.log(2.0)


class InfeasibleSkeleton(Exception):
    """The fixed integer decisions admit no rate vector meeting all constraints."""


@dataclass
class ResidualProblem:
    subchannels: np.ndarray  # active SC indices, length J
    users: np.ndarray  # user on each active SC
    gain: np.ndarray  # G_n on each active SC
    A: np.ndarray  # rows over z = [s (J), t (T)]
    b: np.ndarray
    need: np.ndarray  # per-user target in bits/s/Hz
    num_epigraph: int
    kinds: list  # row labels: ("rate", k) / ("fronthaul", m) / ("epigraph", m) / ("nonneg", j)

    @property
    def J(self) -> int:
        return self.subchannels.size

    def objective(self, s):
        return float(np.sum(np.expm1(LN2 * s) / self.gain))

    def gradient(self, s):
        return LN2 * np.exp2(s) / self.gain

    def hessian_diag(self, s):
        return LN2 * LN2 * np.exp2(s) / self.gain


def build_residual(users, selection, chan: ChannelState, content: ContentState,
                   cfg: SystemConfig) -> ResidualProblem:
    """Assemble the residual program for skeleton ``(users[n], selection[m, n])``.

    Raises :class:`InfeasibleSkeleton` if some user has no usable SC.
    """
    users = np.asarray(users, dtype=np.int64)
    selection = np.asarray(selection, dtype=float)
    M, K = cfg.num_rrhs, cfg.num_users
    gains = chan.gain / cfg.noise_power  # (K, M, N)
    on = np.flatnonzero(users >= 0)
    G = np.array([np.sum(gains[users[n], :, n] * selection[:, n]) for n in on])
    keep = G > 0
    sc, us, G = on[keep], users[on][keep], G[keep]
    J = sc.size
    w = cfg.subchannel_bandwidth
    need = cfg.min_rate / w
    for k in range(K):
        if not np.any(us == k):
            raise InfeasibleSkeleton(f"user {k} has no subchannel with a selected RRH")

    rows, rhs, kinds = [], [], []
    epi_rows = []  # (row over s, m) pending epigraph variable index
    n_epi = 0
    fh_rows = []
    for m in range(M):
        terms = []  # each term: ('lin', coeffs over s) or ('epi', index)
        for f in np.unique(content.requested):
            if content.cache[m, f]:
                continue
            group = []
            for k in np.flatnonzero(content.requested == f):
                mask = (us == k) & (selection[m, sc] > 0)
                if mask.any():
                    group.append(mask.astype(float))
            if len(group) == 1:
                terms.append(("lin", group[0]))
            elif len(group) > 1:
                for coeffs in group:
                    epi_rows.append((coeffs, n_epi))
                terms.append(("epi", n_epi))
                n_epi += 1
        if terms:
            fh_rows.append((m, terms))

    T = n_epi
    for j in range(J):
        r = np.zeros(J + T)
        r[j] = -1.0
        rows.append(r), rhs.append(0.0), kinds.append(("nonneg", j))
    for k in range(K):
        r = np.zeros(J + T)
        r[:J] = -(us == k).astype(float)
        rows.append(r), rhs.append(-need[k]), kinds.append(("rate", k))
    for coeffs, e in epi_rows:
        r = np.zeros(J + T)
        r[:J] = coeffs
        r[J + e] = -1.0
        rows.append(r), rhs.append(0.0), kinds.append(("epigraph", e))
    for m, terms in fh_rows:
        r = np.zeros(J + T)
        for kind, val in terms:
            if kind == "lin":
                r[:J] += val
            else:
                r[J + val] += 1.0
        rows.append(r), rhs.append(cfg.fronthaul_capacity[m] / w), kinds.append(("fronthaul", m))
    A = np.array(rows).reshape(-1, J + T)
    return ResidualProblem(sc, us, G, A, np.array(rhs), need, T, kinds)


def conic_solve(rp: ResidualProblem, tol: float = 1e-10):
    """Solve the residual program as an exponential-cone problem.

    Variables ``[s (J), t (T), u (J)]`` with ``2^{s_j} <= 1 + u_j`` written as
    ``(ln2 s_j, 1, 1 + u_j)`` in the exponential cone, objective
    ``sum_j u_j / G_j`` rescaled to order one. Unlike a barrier method this
    copes with skeletons whose feasible set has an empty interior (fronthaul
    capacity exactly equal to the rates it must carry).

    Returns ``(s, objective)``; raises :class:`InfeasibleSkeleton`.
    """
    J, T = rp.J, rp.num_epigraph
    nz = J + T + J
    weight = 1.0 / rp.gain
    scale = 1.0 / weight.max()
    q = np.zeros(nz)
    q[J + T:] = weight * scale
    lin = sparse.hstack([sparse.csc_matrix(rp.A), sparse.csc_matrix((rp.A.shape[0], J))])
    rows, cols, vals = [], [], []
    for j in range(J):
        rows += [3 * j, 3 * j + 2]
        cols += [j, J + T + j]
        vals += [-LN2, -1.0]
    cone_A = sparse.csc_matrix((vals, (rows, cols)), shape=(3 * J, nz))
    A = sparse.vstack([lin, cone_A]).tocsc()
    b = np.concatenate([rp.b, np.tile([0.0, 1.0, 1.0], J)])
    cones = [clarabel.NonnegativeConeT(rp.A.shape[0])] + [clarabel.ExponentialConeT()] * J
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = 200
    sol = clarabel.DefaultSolver(sparse.csc_matrix((nz, nz)), q, A, b, cones, settings).solve()
    status = str(sol.status)
    if "Infeasible" in status:
        raise InfeasibleSkeleton("no rate vector meets the rate and fronthaul constraints")
    if status not in ("Solved", "AlmostSolved"):
        raise InfeasibleSkeleton(f"residual solver stopped with status {status}")
    s = np.maximum(np.asarray(sol.x)[:J], 0.0)
    return s, rp.objective(s)


@dataclass
class RecoveryResult:
    allocation: Optional[Allocation]
    power: float
    feasible: bool
    reason: str = ""


def solve_skeleton(users, selection, chan: ChannelState, content: ContentState,
                   cfg: SystemConfig, tol: float = 1e-10) -> RecoveryResult:
    """Minimum-power allocation for a fixed skeleton, or an infeasibility report."""
    try:
        rp = build_residual(users, selection, chan, content, cfg)
        s, _ = conic_solve(rp, tol)
    except InfeasibleSkeleton as exc:
        return RecoveryResult(None, math.inf, False, str(exc))
    selection = np.asarray(selection, dtype=float)
    M, K, N = cfg.num_rrhs, cfg.num_users, cfg.num_subchannels
    nu = np.zeros((K, N), dtype=np.int8)
    alpha = np.zeros((M, N), dtype=np.int8)
    p = np.zeros((M, N))
    w = cfg.subchannel_bandwidth
    for j, n in enumerate(rp.subchannels):
        k = rp.users[j]
        nu[k, n] = 1
        alpha[:, n] = selection[:, n] > 0
        p[:, n] = min_power_for_rate(chan.h[k, :, n], alpha[:, n], s[j] * w, cfg)
    alloc = Allocation(nu, alpha, p, np.zeros((M, cfg.num_contents)))
    # auxiliary shares: per-content fronthaul rate over capacity
    r = nu * rate_matrix(alloc, chan, cfg)
    per_user = np.where(content.uncached, alpha.astype(float) @ r.T, 0.0)
    share = np.zeros((M, cfg.num_contents))
    for k, fk in enumerate(content.requested):
        share[:, fk] = np.maximum(share[:, fk], per_user[:, k] / cfg.fronthaul_capacity)
    alloc = Allocation(nu, alpha, p, share)
    report = check_feasibility(alloc, content, chan, cfg)
    if not report.feasible:
        kind, idx, slack = report.violations[0]
        return RecoveryResult(None, math.inf, False, f"recovered point violates {kind}[{idx}] by {-slack:.3g}")
    return RecoveryResult(alloc, float(p.sum()), True)


def primal_recovery(sol, chan: ChannelState, content: ContentState, cfg: SystemConfig,
                    tol: float = 1e-10) -> RecoveryResult:
    """Fix ``(users, selection)`` from a Lagrangian minimiser and re-optimise powers."""
    return solve_skeleton(sol.users, sol.selection, chan, content, cfg, tol)


def best_recovery(solutions, chan: ChannelState, content: ContentState, cfg: SystemConfig,
                  tol: float = 1e-10) -> RecoveryResult:
    """Lowest-power feasible recovery over several skeletons.

    ``solutions`` holds :class:`SubproblemSolution` objects or
    ``(users, selection)`` pairs. Duplicates are solved once and ties keep
    the earlier skeleton.
    """
    best = None
    seen = set()
    reasons = []
    for sol in solutions:
        users, selection = (sol.users, sol.selection) if hasattr(sol, "users") else sol
        users = np.asarray(users, dtype=np.int64)
        selection = np.asarray(selection)
        key = users.tobytes() + selection.astype(np.int8).tobytes()
        if key in seen:
            continue
        seen.add(key)
        res = solve_skeleton(users, selection, chan, content, cfg, tol)
        if res.feasible and (best is None or res.power < best.power):
            best = res
        elif not res.feasible:
            reasons.append(res.reason)
    if best is None:
        return RecoveryResult(None, math.inf, False, reasons[0] if reasons else "no candidate skeleton")
    return best


def tie_skeletons(table: OptionTable, g: float, content: ContentState, cfg: SystemConfig,
                  tie_tol: float = 1e-3, max_round: int = 64, atol: float = 1e-12):
    """Skeletons built from near-minimisers of the Lagrangian at one dual point.

    At a dual optimum several per-SC choices typically tie (exactly so when
    SCs are statistically identical), and the primal optimum time-shares
    between them. An LP over the tied options, with their powers and rates
    at this dual point, picks a fractional mix of them; its few fractional
    SCs are then rounded every possible way (up to ``max_round``
    combinations, largest weights first).

    The tie window per SC is ``tie_tol * max(|g|, atol) / N``. Rates at a
    finite-accuracy dual point only approximately balance, so the LP's rate
    and fronthaul rows are soft (penalised normalised slack); the conic
    re-solve of each rounded skeleton then restores exact feasibility.
    Returns a list of ``(users, selection)`` pairs.
    """
    N = cfg.num_subchannels
    vmin = table.value.min(axis=1, keepdims=True)
    ties = table.value <= vmin + tie_tol * max(abs(g), atol) / N
    x = _tie_lp(table, ties, content, cfg)
    support = []
    for n in range(N):
        opts = np.flatnonzero(x[n] > 1e-9)
        support.append(opts[np.argsort(-x[n, opts], kind="stable")])
    out = []
    for combo in itertools.islice(itertools.product(*support), max_round):
        combo = np.array(combo)
        users = table.users[combo]
        sel = table.selection[np.arange(N), combo].T
        out.append((users, sel))
    return out


def _tie_lp(table, ties, content, cfg, penalty: float = 1e3):
    N, M = cfg.num_subchannels, cfg.num_rrhs
    w = cfg.subchannel_bandwidth
    nn, oo = np.nonzero(ties)
    V = nn.size
    groups = [(m, f) for m in range(M) for f in np.unique(content.requested) if not content.cache[m, f]]
    T = len(groups)
    r = table.rate[nn, oo] / w
    cost = table.power[nn, oo]
    cost = cost / max(cost.max(), 1e-300)
    users = table.users[oo]
    rows, rhs = [], []
    for k in range(cfg.num_users):
        row = np.zeros(V + T)
        row[:V] = -np.where(users == k, r, 0.0)
        rows.append(row), rhs.append(-cfg.min_rate[k] / w)
    for j, (m, f) in enumerate(groups):
        for k in np.flatnonzero(content.requested == f):
            row = np.zeros(V + T)
            row[:V] = np.where((users == k) & (table.selection[nn, oo, m] > 0), r, 0.0)
            row[V + j] = -1.0
            rows.append(row), rhs.append(0.0)
    for m in range(M):
        row = np.zeros(V + T)
        row[V:] = [1.0 if mm == m else 0.0 for mm, _ in groups]
        rows.append(row), rhs.append(cfg.fronthaul_capacity[m] / w)
    A = np.array(rows)
    b = np.array(rhs)
    R = A.shape[0]
    # slack per row, scaled by the row's right-hand side
    slack_scale = np.maximum(np.abs(b), 1.0)
    A_ub = np.hstack([A, -np.diag(slack_scale)])
    A_eq = np.zeros((N, V + T + R))
    A_eq[nn, np.arange(V)] = 1.0
    c = np.concatenate([cost, np.zeros(T), np.full(R, penalty)])
    lp = linprog(c, A_ub=A_ub, b_ub=b, A_eq=A_eq, b_eq=np.ones(N),
                 bounds=[(0, None)] * (V + T + R), method="highs")
    x = np.zeros(ties.shape)
    if lp.status != 0:
        x[np.arange(N), np.argmax(ties, axis=1)] = 1.0
        return x
    x[nn, oo] = lp.x[:V]
    return x


def recover(result, chan: ChannelState, content: ContentState, cfg: SystemConfig,
            mode: str = "exhaustive", problem: Optional[DualProblem] = None,
            tol: float = 1e-10, tie_tol: float = 1e-3, max_round: int = 64) -> RecoveryResult:
    """Primal allocation from a finished dual solve.

    Tries the tie-based skeletons at the final dual point first, then the
    Lagrangian minimisers pooled during the ellipsoid run, and keeps the
    feasible one with the least power.
    """
    pb = problem or DualProblem(chan, content, cfg)
    table = pb.option_table(result.dual, mode)
    skeletons = tie_skeletons(table, result.g, content, cfg, tie_tol, max_round)
    return best_recovery(skeletons + list(result.candidates), chan, content, cfg, tol)
