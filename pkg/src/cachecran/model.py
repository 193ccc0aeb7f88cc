"""Domain types and physical-layer arithmetic for a cache-enabled OFDMA CRAN.

Index conventions used throughout the package:

* ``k`` users (``K``), ``m`` RRHs (``M``), ``n`` subchannels (``N``) and
  ``f`` contents (``F``), all zero-based.
* Channel tensors are laid out ``(K, M, N)``.
* Rates are bits/s, powers are Watts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

__all__ = [
    "SystemConfig",
    "ChannelState",
    "ContentState",
    "Allocation",
    "FeasibilityReport",
    "snr",
    "rate",
    "min_power_for_rate",
    "rate_matrix",
    "user_rates",
    "fronthaul_load",
    "fronthaul_loads",
    "check_feasibility",
    "total_power",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemConfig:
    """Static problem parameters.

    ``fronthaul_capacity`` and ``min_rate`` accept scalars, which are
    broadcast to one entry per RRH / user.
    """

    num_rrhs: int
    num_users: int
    num_subchannels: int
    num_contents: int
    bandwidth: float
    noise_power: float
    fronthaul_capacity: np.ndarray
    min_rate: np.ndarray
    cache_size: int = 0

    def __post_init__(self):
        for name in ("num_rrhs", "num_users", "num_subchannels", "num_contents"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        fh = np.broadcast_to(np.asarray(self.fronthaul_capacity, float), (self.num_rrhs,))
        rmin = np.broadcast_to(np.asarray(self.min_rate, float), (self.num_users,))
        if not np.all(fh > 0):
            raise ValueError("fronthaul capacities must be positive")
        if not np.all(rmin > 0):
            raise ValueError("minimum rates must be positive")
        if int(self.cache_size) != self.cache_size or not 0 <= self.cache_size <= self.num_contents:
            raise ValueError(
                f"cache_size must be an integer in [0, {self.num_contents}], got {self.cache_size!r}"
            )
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "noise_power", float(self.noise_power))
        object.__setattr__(self, "fronthaul_capacity", _frozen(fh))
        object.__setattr__(self, "min_rate", _frozen(rmin))
        object.__setattr__(self, "cache_size", int(self.cache_size))

    @property
    def subchannel_bandwidth(self) -> float:
        return self.bandwidth / self.num_subchannels

    def replace(self, **changes) -> "SystemConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return SystemConfig(**kw)


@dataclass(frozen=True)
class ChannelState:
    """Complex access-channel coefficients ``h[k, m, n]``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 3:
            raise ValueError(f"channel tensor must be 3-D (K, M, N), got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel coefficients must be finite")
        object.__setattr__(self, "h", _frozen(h, complex))

    @property
    def gain(self) -> np.ndarray:
        """Power gains ``|h|^2`` with the same layout as ``h``."""
        return np.abs(self.h) ** 2

    def check(self, cfg: SystemConfig) -> None:
        expected = (cfg.num_users, cfg.num_rrhs, cfg.num_subchannels)
        if self.h.shape != expected:
            raise ValueError(f"channel shape {self.h.shape} does not match (K, M, N) = {expected}")


@dataclass(frozen=True)
class ContentState:
    """Cache placement and user requests.

    Parameters
    ----------
    cache : (M, F) binary array
        ``cache[m, f] == 1`` when RRH ``m`` stores content ``f``.
    requested : (K,) int array
        Content index requested by every user. The one-hot request matrix
        is derived from it, so every user requests exactly one content.
    popularity : (F,) array, optional
        Request pmf; uniform when omitted.
    """

    cache: np.ndarray
    requested: np.ndarray
    popularity: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.cache)
        if c.ndim != 2:
            raise ValueError("cache must be an (M, F) matrix")
        if not np.all((c == 0) | (c == 1)):
            raise ValueError("cache entries must be 0 or 1")
        F = c.shape[1]
        req = np.asarray(self.requested)
        if req.ndim != 1:
            raise ValueError("requested must be a length-K vector of content indices")
        if req.size and (np.any(req != np.round(req)) or req.min() < 0 or req.max() >= F):
            raise ValueError("every user must request a valid content index in [0, F)")
        pi = np.full(F, 1.0 / F) if self.popularity is None else np.asarray(self.popularity, float)
        if pi.shape != (F,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("popularity must be a length-F probability vector")
        object.__setattr__(self, "cache", _frozen(c, np.int8))
        object.__setattr__(self, "requested", _frozen(req, np.int64))
        object.__setattr__(self, "popularity", _frozen(pi))

    @classmethod
    def from_requests(cls, cache, requests, popularity=None) -> "ContentState":
        """Build from a one-hot ``(K, F)`` request matrix."""
        u = np.asarray(requests)
        if np.any(u.sum(axis=1) != 1):
            raise ValueError("each user must request exactly one content")
        return cls(cache, np.argmax(u, axis=1), popularity)

    @property
    def requests(self) -> np.ndarray:
        """One-hot request matrix ``u[k, f]``."""
        u = np.zeros((self.requested.size, self.cache.shape[1]), dtype=np.int8)
        u[np.arange(self.requested.size), self.requested] = 1
        return u

    @property
    def uncached(self) -> np.ndarray:
        """``(M, K)`` mask, true where RRH ``m`` lacks the content user ``k`` wants."""
        return self.cache[:, self.requested] == 0

    def check(self, cfg: SystemConfig) -> None:
        if self.cache.shape != (cfg.num_rrhs, cfg.num_contents):
            raise ValueError(f"cache shape {self.cache.shape} != (M, F)")
        if self.requested.shape != (cfg.num_users,):
            raise ValueError(f"requested has {self.requested.size} entries, expected K={cfg.num_users}")
        if np.any(self.cache.sum(axis=1) > cfg.cache_size):
            raise ValueError("an RRH caches more contents than cache_size allows")


@dataclass(frozen=True)
class Allocation:
    """User-subchannel assignment, RRH selection, powers and fronthaul shares.

    Only shapes and binary-ness are validated here; OFDMA exclusivity and the
    rest of the constraint set are checked by :func:`check_feasibility`.
    """

    assignment: np.ndarray  # (K, N) binary
    selection: np.ndarray  # (M, N) binary
    power: np.ndarray  # (M, N) Watts
    share: np.ndarray = None  # (M, F)

    def __post_init__(self):
        nu = np.asarray(self.assignment)
        alpha = np.asarray(self.selection)
        p = np.asarray(self.power, float)
        if nu.ndim != 2 or alpha.ndim != 2 or p.shape != alpha.shape:
            raise ValueError("assignment must be (K, N); selection and power must both be (M, N)")
        if nu.shape[1] != alpha.shape[1]:
            raise ValueError("assignment and selection disagree on the number of subchannels")
        for name, a in (("assignment", nu), ("selection", alpha)):
            if not np.all((a == 0) | (a == 1)):
                raise ValueError(f"{name} must be binary")
        rho = np.zeros((alpha.shape[0], 0)) if self.share is None else np.asarray(self.share, float)
        object.__setattr__(self, "assignment", _frozen(nu, np.int8))
        object.__setattr__(self, "selection", _frozen(alpha, np.int8))
        object.__setattr__(self, "power", _frozen(p))
        object.__setattr__(self, "share", _frozen(rho))

    @classmethod
    def zeros(cls, cfg: SystemConfig) -> "Allocation":
        M, K, N, F = cfg.num_rrhs, cfg.num_users, cfg.num_subchannels, cfg.num_contents
        return cls(np.zeros((K, N)), np.zeros((M, N)), np.zeros((M, N)), np.zeros((M, F)))

    @property
    def subchannel_users(self) -> np.ndarray:
        """User index on each subchannel, ``-1`` when idle (first user if several)."""
        nu = self.assignment
        return np.where(nu.any(axis=0), np.argmax(nu, axis=0), -1)


@dataclass
class FeasibilityReport:
    user_rates: np.ndarray
    fronthaul_loads: np.ndarray
    total_power: float
    violations: List[Tuple[str, int, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations


def snr(h_row, alpha_n, p_n, noise_power: float) -> float:
    """Receive SNR under coherent combining of the selected RRHs."""
    h_row = np.asarray(h_row)
    alpha_n = np.asarray(alpha_n, float)
    p_n = np.asarray(p_n, float)
    if not h_row.shape == alpha_n.shape == p_n.shape or h_row.ndim != 1:
        raise ValueError("h_row, alpha_n and p_n must be vectors of equal length")
    if not noise_power > 0:
        raise ValueError("noise_power must be positive")
    if np.any(p_n < 0):
        raise ValueError("powers must be nonnegative")
    amp = np.sum(np.abs(h_row) * alpha_n * np.sqrt(p_n))
    return float(amp * amp / noise_power)


def rate(gamma, cfg: SystemConfig):
    """Achievable rate ``(B/N) log2(1 + gamma)`` in bits/s."""
    g = np.asarray(gamma, float)
    if np.any(g < 0):
        raise ValueError("SNR must be nonnegative")
    r = cfg.subchannel_bandwidth * np.log2(1.0 + g)
    return float(r) if r.ndim == 0 else r


def min_power_for_rate(h_row, alpha_n, target_rate: float, cfg: SystemConfig) -> np.ndarray:
    """Cheapest per-RRH powers reaching ``target_rate`` on one subchannel.

    The total power ``(2^(N r / B) - 1) / G`` is split proportionally to
    ``|h_m|^2`` over the selected RRHs, with ``G = sum_m alpha_m |h_m|^2 / sigma^2``.
    """
    h_row = np.asarray(h_row)
    alpha_n = np.asarray(alpha_n, float)
    if h_row.shape != alpha_n.shape:
        raise ValueError("h_row and alpha_n must have equal length")
    if target_rate < 0:
        raise ValueError("target_rate must be nonnegative")
    p = np.zeros(h_row.shape)
    if target_rate == 0:
        return p
    w = alpha_n * np.abs(h_row) ** 2 / cfg.noise_power
    G = w.sum()
    if not G > 0:
        raise ValueError("a positive rate needs at least one selected RRH with nonzero gain")
    gamma = np.expm1(np.log(2.0) * target_rate / cfg.subchannel_bandwidth)
    return gamma * w / (G * G)


def rate_matrix(alloc: Allocation, chan: ChannelState, cfg: SystemConfig) -> np.ndarray:
    """``r[k, n]``: rate user ``k`` would decode on SC ``n`` from the SC's transmission."""
    amp = np.einsum("kmn,mn->kn", np.abs(chan.h), alloc.selection * np.sqrt(np.maximum(alloc.power, 0.0)))
    return cfg.subchannel_bandwidth * np.log2(1.0 + amp * amp / cfg.noise_power)


def user_rates(alloc: Allocation, chan: ChannelState, cfg: SystemConfig) -> np.ndarray:
    return np.sum(alloc.assignment * rate_matrix(alloc, chan, cfg), axis=1)


def fronthaul_loads(alloc: Allocation, content: ContentState, chan: ChannelState, cfg: SystemConfig) -> np.ndarray:
    """Fronthaul rate every RRH must receive, shape ``(M,)``.

    For each uncached content only the largest per-user delivery counts, so
    users sharing a request share the fetched data.
    """
    r = alloc.assignment * rate_matrix(alloc, chan, cfg)  # (K, N)
    per_user = alloc.selection.astype(float) @ r.T  # (M, K)
    per_user = np.where(content.uncached, per_user, 0.0)
    M, F = content.cache.shape
    load = np.zeros((M, F))
    for k, f in enumerate(content.requested):
        load[:, f] = np.maximum(load[:, f], per_user[:, k])
    return load.sum(axis=1)


def fronthaul_load(m: int, alloc: Allocation, content: ContentState, chan: ChannelState, cfg: SystemConfig) -> float:
    if not 0 <= m < cfg.num_rrhs:
        raise IndexError(f"RRH index {m} out of range")
    return float(fronthaul_loads(alloc, content, chan, cfg)[m])


def total_power(alloc: Allocation) -> float:
    return float(np.sum(alloc.power))


def check_feasibility(
    alloc: Allocation,
    content: ContentState,
    chan: ChannelState,
    cfg: SystemConfig,
    tol: float = 1e-6,
) -> FeasibilityReport:
    """Evaluate every constraint of the power-minimisation problem.

    Violations are reported as ``(kind, index, slack)`` with ``slack`` in the
    constraint's own units (negative means violated). Rate constraints use
    the relative tolerance ``tol`` against their bound.

    Kinds: ``min_rate`` (per user), ``fronthaul`` (per RRH), ``exclusivity``
    and ``idle_power`` (per subchannel), ``nonnegativity`` (per flat (m, n)).
    """
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    chan.check(cfg)
    content.check(cfg)
    if alloc.assignment.shape != (K, N) or alloc.power.shape != (M, N):
        raise ValueError("allocation shape does not match the system configuration")

    violations = []
    for i in np.flatnonzero(alloc.power.ravel() < 0):
        violations.append(("nonnegativity", int(i), float(alloc.power.ravel()[i])))
    safe = Allocation(alloc.assignment, alloc.selection, np.maximum(alloc.power, 0.0), alloc.share)

    users_per_sc = alloc.assignment.sum(axis=0)
    for n in np.flatnonzero(users_per_sc > 1):
        violations.append(("exclusivity", int(n), float(1 - users_per_sc[n])))
    idle = users_per_sc == 0
    stray = np.sum(np.abs(alloc.power), axis=0)
    for n in np.flatnonzero(idle & (stray > 0)):
        violations.append(("idle_power", int(n), -float(stray[n])))

    rates = user_rates(safe, chan, cfg)
    for k in range(K):
        slack = rates[k] - cfg.min_rate[k]
        if slack < -tol * cfg.min_rate[k]:
            violations.append(("min_rate", k, float(slack)))

    loads = fronthaul_loads(safe, content, chan, cfg)
    for m in range(M):
        slack = cfg.fronthaul_capacity[m] - loads[m]
        if slack < -tol * cfg.fronthaul_capacity[m]:
            violations.append(("fronthaul", m, float(slack)))

    return FeasibilityReport(rates, loads, total_power(alloc), violations)
