"""Lagrange dual decomposition of the cache-aware power minimisation.

Dual variables are kept as one flat vector ``x = [lam, mu]``: ``lam`` has one
entry per (RRH, user) pair whose requested content is *not* cached at that
RRH (other pairs carry no fronthaul constraint), ``mu`` one entry per user.

For fixed duals the Lagrangian separates over subchannels. On each SC the
user, the RRH subset and the powers are chosen to minimise

    L_n = sum_m p_m - F(alpha) * r(alpha, p)

with ``F(alpha) = mu_k / Rmin_k - sum_{m in alpha, uncached} lam_mk / Rbar_m``.
For a fixed subset the optimal powers have a closed form (threshold plus
gain-proportional split); the subset is found exhaustively or greedily.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import Allocation, ChannelState, ContentState, SystemConfig, rate, snr

LN2 = math.log(2.0)
MODES = ("exhaustive", "greedy")


@dataclass(frozen=True)
class DualState:
    """Fronthaul multipliers ``lam`` on active (m, k) pairs and rate multipliers ``mu``."""

    lam: np.ndarray
    mu: np.ndarray
    pairs: np.ndarray  # (C, 2) rows of (m, k)

    def __post_init__(self):
        lam = np.asarray(self.lam, float).reshape(-1)
        mu = np.asarray(self.mu, float).reshape(-1)
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if lam.size != len(pairs):
            raise ValueError(f"lam has {lam.size} entries for {len(pairs)} constrained pairs")
        if np.any(lam < 0) or np.any(mu < 0):
            raise ValueError("dual variables must be nonnegative")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pairs", pairs)

    @staticmethod
    def pairs_for(content: ContentState) -> np.ndarray:
        """Constrained (m, k) pairs in lexicographic order."""
        m, k = np.nonzero(content.uncached)
        return np.column_stack([m, k]).astype(np.int64)

    @classmethod
    def zeros(cls, content: ContentState) -> "DualState":
        pairs = cls.pairs_for(content)
        return cls(np.zeros(len(pairs)), np.zeros(content.requested.size), pairs)

    @classmethod
    def from_vector(cls, x, content: ContentState) -> "DualState":
        pairs = cls.pairs_for(content)
        x = np.asarray(x, float)
        return cls(x[: len(pairs)], x[len(pairs):], pairs)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.lam, self.mu])

    def lam_matrix(self, num_rrhs: int) -> np.ndarray:
        """``(M, K)`` view of ``lam`` with zeros on cached pairs."""
        out = np.zeros((num_rrhs, self.mu.size))
        out[self.pairs[:, 0], self.pairs[:, 1]] = self.lam
        return out

    def index(self, m: int, k: int) -> int:
        hit = np.flatnonzero((self.pairs[:, 0] == m) & (self.pairs[:, 1] == k))
        if hit.size == 0:
            raise KeyError(f"pair (m={m}, k={k}) has no fronthaul constraint")
        return int(hit[0])


@dataclass
class SubproblemSolution:
    """Minimisers of the Lagrangian at one dual point.

    ``users[n]`` is the user served on SC ``n`` or ``-1``.
    """

    users: np.ndarray  # (N,)
    selection: np.ndarray  # (M, N)
    power: np.ndarray  # (M, N)
    values: np.ndarray  # (N,) per-SC Lagrangian terms
    share: np.ndarray  # (M, F)
    g1: float
    g2: float
    g: float
    evaluations: int = 0

    def skeleton_key(self) -> bytes:
        return self.users.astype(np.int64).tobytes() + self.selection.astype(np.int8).tobytes()

    def allocation(self, num_users: int) -> Allocation:
        N = self.users.size
        nu = np.zeros((num_users, N), dtype=np.int8)
        on = self.users >= 0
        nu[self.users[on], np.flatnonzero(on)] = 1
        return Allocation(nu, self.selection, self.power, self.share)


@dataclass
class OptionTable:
    """Per-SC candidate choices at one dual point (option 0 is idle)."""

    users: np.ndarray  # (O,)
    selection: np.ndarray  # (N, O, M)
    value: np.ndarray  # (N, O) Lagrangian term
    power: np.ndarray  # (N, O) total power
    rate: np.ndarray  # (N, O) bits/s


def all_selections(num_rrhs: int) -> np.ndarray:
    """Every RRH subset as rows of a ``(2^M, M)`` 0/1 matrix; row ``s`` has bit ``m`` of ``s``."""
    s = np.arange(2 ** num_rrhs)
    return ((s[:, None] >> np.arange(num_rrhs)) & 1).astype(float)


def _lagrangian_term(weight, G, c0):
    """Minimum over total power of ``P - weight * c0 * ln(1 + G P)``.

    Returns ``(value, P)``. ``P`` is positive exactly when
    ``weight * G > 1 / c0``; everything broadcasts.
    """
    on = weight * G > 1.0 / c0
    Gs = np.where(on, G, 1.0)
    x = np.where(on, weight * Gs * c0, 1.0)
    P = np.where(on, (x - 1.0) / Gs, 0.0)
    value = np.where(on, P - weight * c0 * np.log(x), 0.0)
    return value, P


class DualProblem:
    """Precomputed arrays for repeated dual-function evaluations on one instance."""

    def __init__(self, chan: ChannelState, content: ContentState, cfg: SystemConfig):
        chan.check(cfg)
        content.check(cfg)
        self.chan, self.content, self.cfg = chan, content, cfg
        self.M, self.K, self.N, self.F = cfg.num_rrhs, cfg.num_users, cfg.num_subchannels, cfg.num_contents
        # (N, K, M) normalised gains |h|^2 / sigma^2
        self.gains = np.ascontiguousarray(np.transpose(chan.gain, (2, 0, 1)) / cfg.noise_power)
        self.c0 = cfg.subchannel_bandwidth / LN2  # (B/N) / ln 2
        self.uncached = content.uncached  # (M, K)
        self.pairs = DualState.pairs_for(content)
        self.C = len(self.pairs)
        self.dim = self.C + self.K
        self.masks = all_selections(self.M)
        self.requests = content.requests.astype(float)  # (K, F)

    # -- helpers -------------------------------------------------------------
    def dual(self, x) -> DualState:
        return DualState(np.asarray(x[: self.C]), np.asarray(x[self.C:]), self.pairs)

    def weights(self, dual: DualState):
        """Per-user base weight ``mu/Rmin`` and per-(k, m) fronthaul penalty ``lam/Rbar``."""
        lam = dual.lam_matrix(self.M)
        base = dual.mu / self.cfg.min_rate
        penalty = (self.uncached * lam / self.cfg.fronthaul_capacity[:, None]).T  # (K, M)
        return base, penalty

    def evaluate_masks(self, base, penalty, masks, subchannels=None):
        """Lagrangian term for fixed-user problems with explicit RRH subsets.

        ``masks`` broadcasts against ``(n, K, X, M)`` with candidates along
        ``X`` and RRHs along the last axis. Returns ``(value, total_power, G, F)``,
        each shaped ``(n, K, X)``.
        """
        g = self.gains if subchannels is None else self.gains[subchannels]
        G = np.sum(g[:, :, None, :] * masks, axis=-1)
        Fw = base[None, :, None] - np.sum(penalty[None, :, None, :] * masks, axis=-1)
        value, P = _lagrangian_term(Fw, G, self.c0)
        return value, P, G, Fw

    # -- per-SC subproblems ---------------------------------------------------
    def solve_subchannels(self, dual: DualState, mode: str = "exhaustive", subchannels=None):
        """Minimise every per-SC Lagrangian term.

        Returns ``(users, selection (n, M), total_power (n,), values (n,), evaluations)``
        for the requested subchannels (all by default).
        """
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        base, penalty = self.weights(dual)
        n_idx = np.arange(self.N) if subchannels is None else np.atleast_1d(subchannels)
        nsc = n_idx.size
        if mode == "exhaustive":
            S = self.masks.shape[0]
            value, P, _, _ = self.evaluate_masks(base, penalty, self.masks[None, None], n_idx)
            flat = value.reshape(nsc, self.K * S)
            best = np.argmin(flat, axis=1)  # first minimum: lowest user, then lowest subset id
            bval = flat[np.arange(nsc), best]
            k_best, s_best = np.divmod(best, S)
            sel = self.masks[s_best]
            ptot = P.reshape(nsc, -1)[np.arange(nsc), best]
            evaluations = nsc * self.K * S
        else:
            sel_ku, val_ku, p_ku, evaluations = self._greedy(base, penalty, n_idx)
            k_best = np.argmin(val_ku, axis=1)
            bval = val_ku[np.arange(nsc), k_best]
            sel = sel_ku[np.arange(nsc), k_best]
            ptot = p_ku[np.arange(nsc), k_best]
        idle = ~(bval < 0.0)
        users = np.where(idle, -1, k_best)
        sel = np.where(idle[:, None], 0.0, sel)
        ptot = np.where(idle, 0.0, ptot)
        bval = np.where(idle, 0.0, bval)
        return users, sel, ptot, bval, int(evaluations)

    def _greedy(self, base, penalty, n_idx):
        """Grow each (SC, user) subset by the RRH giving the largest decrease."""
        nsc, K, M = n_idx.size, self.K, self.M
        mask = np.zeros((nsc, K, M))
        cur = np.zeros((nsc, K))
        ptot = np.zeros((nsc, K))
        active = np.ones((nsc, K), dtype=bool)
        eye = np.eye(M)
        evaluations = 0
        for _ in range(M):
            if not active.any():
                break
            cand = np.maximum(mask[:, :, None, :], eye)  # (nsc, K, M, M)
            value, P, _, _ = self.evaluate_masks(base, penalty, cand, n_idx)
            fresh = mask == 0
            evaluations += int(np.sum(fresh & active[:, :, None]))
            value = np.where(fresh, value, np.inf)
            j = np.argmin(value, axis=2)
            vbest = np.take_along_axis(value, j[..., None], axis=2)[..., 0]
            improve = active & (vbest < cur)
            ii, kk = np.nonzero(improve)
            mask[ii, kk, j[ii, kk]] = 1.0
            cur = np.where(improve, vbest, cur)
            ptot = np.where(improve, np.take_along_axis(P, j[..., None], axis=2)[..., 0], ptot)
            active = improve
        return mask, cur, ptot, evaluations

    def split_power(self, users, sel, ptot, subchannels=None):
        """Spread each SC's total power over its RRHs proportionally to gain."""
        n_idx = np.arange(self.N) if subchannels is None else np.atleast_1d(subchannels)
        k = np.maximum(users, 0)
        g = self.gains[n_idx, k] * sel  # (n, M)
        G = g.sum(axis=1)
        frac = np.divide(g, G[:, None], out=np.zeros_like(g), where=G[:, None] > 0)
        return frac * ptot[:, None]

    def option_table(self, dual: DualState, mode: str = "exhaustive") -> "OptionTable":
        """Every per-SC choice the subproblem solver could return, with its
        Lagrangian value, total power and rate at ``dual``.

        Option 0 is the idle SC. In exhaustive mode the others are all
        (user, nonempty subset) pairs; in greedy mode one greedy subset per user.
        """
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        base, penalty = self.weights(dual)
        n_idx = np.arange(self.N)
        if mode == "exhaustive":
            masks = self.masks[1:]
            value, P, G, _ = self.evaluate_masks(base, penalty, masks[None, None], n_idx)
            X = masks.shape[0]
            users = np.repeat(np.arange(self.K), X)
            sel = np.broadcast_to(masks, (self.N, self.K, X, self.M)).reshape(self.N, -1, self.M)
            value, P, G = (a.reshape(self.N, -1) for a in (value, P, G))
        else:
            mask, value, P, _ = self._greedy(base, penalty, n_idx)
            users = np.arange(self.K)
            sel = mask
            G = np.sum(self.gains * mask, axis=-1)
        rate = self.cfg.subchannel_bandwidth * np.log2(1.0 + G * P)
        pad = lambda a, v: np.concatenate([np.full((self.N, 1) + a.shape[2:], v), a], axis=1)
        return OptionTable(
            np.concatenate([[-1], users]), pad(np.asarray(sel, dtype=float), 0.0),
            pad(value, 0.0), pad(P, 0.0), pad(rate, 0.0),
        )

    # -- fronthaul shares -------------------------------------------------------
    def solve_g2(self, dual: DualState):
        """Optimal auxiliary shares: each RRH puts its unit budget on the content
        with the largest summed multiplier. Returns ``(share (M, F), g2)``."""
        return solve_g2(dual, self.content, self.cfg)

    # -- dual function ----------------------------------------------------------
    def evaluate(self, dual: DualState, mode: str = "exhaustive"):
        users, sel, ptot, values, evals = self.solve_subchannels(dual, mode)
        power = self.split_power(users, sel, ptot)
        share, g2 = self.solve_g2(dual)
        g1 = float(np.sum(values))
        g = g1 + g2 + float(np.sum(dual.mu))
        sol = SubproblemSolution(users, sel.T.copy(), power.T.copy(), values, share, g1, g2, g, evals)
        return g, sol

    def subchannel_rates(self, sol: SubproblemSolution) -> np.ndarray:
        k = np.maximum(sol.users, 0)
        G = np.sum(self.gains[np.arange(self.N), k] * sol.selection.T, axis=1)
        r = self.cfg.subchannel_bandwidth * np.log2(1.0 + G * sol.power.sum(axis=0))
        return np.where(sol.users >= 0, r, 0.0)

    def subgradient(self, dual: DualState, sol: SubproblemSolution) -> np.ndarray:
        """Supergradient of the (concave) dual function at ``dual``."""
        r = self.subchannel_rates(sol)
        served = np.zeros((self.K, self.N))
        on = sol.users >= 0
        served[sol.users[on], np.flatnonzero(on)] = r[on]
        per_user = served.sum(axis=1)
        via_rrh = sol.selection @ served.T  # (M, K)
        m, k = self.pairs[:, 0], self.pairs[:, 1]
        f = self.content.requested[k]
        d_lam = via_rrh[m, k] / self.cfg.fronthaul_capacity[m] - sol.share[m, f]
        d_mu = 1.0 - per_user / self.cfg.min_rate
        return np.concatenate([d_lam, d_mu])

    def dual_scale(self) -> np.ndarray:
        """Rough magnitude of each dual coordinate at the optimum.

        ``mu_k`` is the marginal power of one unit of normalised rate when user
        ``k`` takes an even share of SCs from its best single RRH; ``lam_mk``
        is capped at ``mu_k Rbar_m / Rmin_k`` beyond which RRH ``m`` can no
        longer serve ``k``.
        """
        share = max(1, self.N // self.K)
        best_single = np.sort(self.gains.max(axis=2), axis=0)[::-1]  # (N, K) descending per user
        G = np.maximum(best_single[share - 1], 1e-300)
        rmin = self.cfg.min_rate
        se = rmin / (self.cfg.subchannel_bandwidth * share)
        mu = rmin * np.exp2(se) / (self.c0 * G)
        m, k = self.pairs[:, 0], self.pairs[:, 1]
        lam = mu[k] * self.cfg.fronthaul_capacity[m] / rmin[k]
        return np.concatenate([lam, mu])


# -- module-level operations --------------------------------------------------


def power_alloc_prop1(user: int, selection, dual: DualState, chan: ChannelState,
                      content: ContentState, cfg: SystemConfig, subchannel: int) -> np.ndarray:
    """Optimal per-RRH powers on one SC for a fixed user and RRH subset.

    ``p_m = [B F G / (N ln2) - 1]^+ alpha_m |h_m|^2 / (G^2 sigma^2)``; zero
    whenever ``F G <= N ln2 / B`` or the subset is empty.
    """
    alpha = np.asarray(selection, float)
    g = np.abs(chan.h[user, :, subchannel]) ** 2 / cfg.noise_power
    lam = dual.lam_matrix(cfg.num_rrhs)[:, user] * content.uncached[:, user]
    Fw = dual.mu[user] / cfg.min_rate[user] - np.sum(alpha * lam / cfg.fronthaul_capacity)
    w = alpha * g
    G = w.sum()
    if not Fw * G > cfg.num_subchannels * LN2 / cfg.bandwidth:
        return np.zeros(cfg.num_rrhs)
    level = cfg.bandwidth * Fw * G / (cfg.num_subchannels * LN2) - 1.0
    return max(level, 0.0) * w / (G * G)


def fixed_user_objective(power, user: int, selection, dual: DualState, chan: ChannelState,
                         content: ContentState, cfg: SystemConfig, subchannel: int) -> float:
    """Per-SC Lagrangian term for explicit powers, evaluated from its definition."""
    alpha = np.asarray(selection, float)
    p = np.asarray(power, float)
    lam = dual.lam_matrix(cfg.num_rrhs)[:, user] * content.uncached[:, user]
    Fw = dual.mu[user] / cfg.min_rate[user] - np.sum(alpha * lam / cfg.fronthaul_capacity)
    r = rate(snr(chan.h[user, :, subchannel], alpha, p, cfg.noise_power), cfg)
    return float(np.sum(p) - Fw * r)


def per_sc_subproblem(n: int, dual: DualState, mode: str, chan: ChannelState,
                      content: ContentState, cfg: SystemConfig, problem: Optional[DualProblem] = None):
    """Solve the Lagrangian subproblem of SC ``n``.

    Returns ``(user or None, selection (M,), power (M,), value)``.
    """
    pb = problem or DualProblem(chan, content, cfg)
    users, sel, ptot, values, _ = pb.solve_subchannels(dual, mode, [n])
    power = pb.split_power(users, sel, ptot, [n])
    k = int(users[0])
    return (None if k < 0 else k), sel[0], power[0], float(values[0])


def solve_g2(dual: DualState, content: ContentState, cfg: SystemConfig):
    """Fronthaul-share subproblem; returns ``(share, g2)``.

    Ties go to the lowest content index; an RRH whose best score is zero
    keeps an all-zero row.
    """
    lam = dual.lam_matrix(cfg.num_rrhs) * content.uncached
    score = lam @ content.requests.astype(float)  # (M, F)
    best = np.argmax(score, axis=1)
    top = score[np.arange(cfg.num_rrhs), best]
    share = np.zeros((cfg.num_rrhs, cfg.num_contents))
    on = top > 0
    share[np.flatnonzero(on), best[on]] = 1.0
    return share, -float(np.sum(top[on]))


def dual_value(dual: DualState, mode: str, chan: ChannelState, content: ContentState,
               cfg: SystemConfig, problem: Optional[DualProblem] = None):
    pb = problem or DualProblem(chan, content, cfg)
    return pb.evaluate(dual, mode)


def subgradient(dual: DualState, sol: SubproblemSolution, chan: ChannelState,
                content: ContentState, cfg: SystemConfig, problem: Optional[DualProblem] = None) -> np.ndarray:
    pb = problem or DualProblem(chan, content, cfg)
    return pb.subgradient(dual, sol)


# -- ellipsoid method -----------------------------------------------------------


@dataclass
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0

    def check(self) -> None:
        np.linalg.cholesky(self.shape)

    def cut(self, a: np.ndarray, depth: float = 0.0) -> bool:
        """Keep ``{x : a.(x - center) <= -depth}``. Returns False if empty."""
        n = self.center.size
        Pa = self.shape @ a
        aPa = float(a @ Pa)
        if not aPa > 0:
            return False
        s = math.sqrt(aPa)
        alpha = depth / s
        if alpha >= 1.0:
            return False
        b = Pa / s
        if n == 1:
            self.center = self.center - 0.5 * (1 + alpha) * b
            self.shape = self.shape * (0.5 * (1 - alpha)) ** 2
        else:
            alpha = max(alpha, -1.0 / n)
            self.center = self.center - (1 + n * alpha) / (n + 1) * b
            coef = 2 * (1 + n * alpha) / ((n + 1) * (1 + alpha))
            P = n * n * (1 - alpha * alpha) / (n * n - 1.0) * (self.shape - coef * np.outer(b, b))
            self.shape = 0.5 * (P + P.T)
        self.iteration += 1
        return True


@dataclass
class DualResult:
    dual: DualState
    solution: SubproblemSolution
    g: float
    converged: bool
    iterations: int
    bound_gap: float  # remaining ellipsoid uncertainty on g
    trajectory: List[Optional[float]] = field(default_factory=list)
    best_trajectory: List[float] = field(default_factory=list)
    candidates: List[SubproblemSolution] = field(default_factory=list)
    evaluations: int = 0


def ellipsoid_solve(chan: ChannelState, content: ContentState, cfg: SystemConfig,
                    mode: str = "exhaustive", radius: float = 1e3, tol: float = 1e-4,
                    max_iter: Optional[int] = None, atol: float = 1e-12,
                    max_candidates: int = 32, problem: Optional[DualProblem] = None) -> DualResult:
    """Maximise the dual function over the nonnegative orthant.

    The initial ellipsoid is centred at the origin with semi-axes
    ``radius * dual_scale()``. Negative centres get a deep feasibility cut on
    their most negative coordinate; otherwise a deep supergradient cut at the
    best value seen so far. Stops when the ellipsoid bound
    ``sqrt(d' P d) <= tol * max(|g_best|, atol)``.

    ``candidates`` collects the distinct Lagrangian minimisers met at the best
    dual values (at most ``max_candidates``), for primal recovery.
    """
    pb = problem or DualProblem(chan, content, cfg)
    n = pb.dim
    if not tol > 0:
        raise ValueError("tol must be positive")
    max_iter = 2000 * n if max_iter is None else int(max_iter)
    scale = pb.dual_scale() * radius
    ell = EllipsoidState(np.zeros(n), np.diag(scale ** 2))

    best_g, best_x, best_sol = -np.inf, None, None
    bound = np.inf
    pool = {}
    traj, best_traj = [], []
    evals = 0
    converged = False
    for _ in range(max_iter):
        x = ell.center
        i = int(np.argmin(x))
        if x[i] < 0:
            traj.append(None)
            best_traj.append(best_g)
            a = np.zeros(n)
            a[i] = -1.0
            if not ell.cut(a, -x[i]):
                break
            continue
        dual = pb.dual(x)
        g, sol = pb.evaluate(dual, mode)
        evals += sol.evaluations
        d = pb.subgradient(dual, sol)
        traj.append(g)
        if g > best_g:
            best_g, best_x, best_sol = g, x.copy(), sol
        best_traj.append(best_g)
        key = sol.skeleton_key()
        if key not in pool or pool[key][0] < g:
            pool[key] = (g, sol)
        if len(pool) > 4 * max_candidates:
            pool = dict(sorted(pool.items(), key=lambda kv: -kv[1][0])[:max_candidates])
        bound = math.sqrt(max(float(d @ ell.shape @ d), 0.0))
        if bound <= tol * max(abs(best_g), atol):
            converged = True
            break
        if not np.any(d):
            bound = 0.0
            converged = True
            break
        if not ell.cut(-d, best_g - g):
            break
    if best_sol is None:
        best_x = np.zeros(n)
        best_g, best_sol = pb.evaluate(pb.dual(best_x), mode)
    ranked = sorted(pool.values(), key=lambda t: -t[0])[:max_candidates]
    return DualResult(
        pb.dual(best_x), best_sol, best_g, converged, len(traj), bound,
        traj, best_traj, [s for _, s in ranked], evals,
    )
