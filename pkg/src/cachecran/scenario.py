"""Random problem instances: geometry, channels, requests and cache placement.

Every random draw comes from a named stream derived from one integer seed,
so swapping the caching strategy leaves topology, channels and requests
untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ChannelState, ContentState, SystemConfig

STREAMS = {"topology": 0, "shadowing": 1, "fading": 2, "requests": 3, "caching": 4}
STRATEGIES = ("most_popular", "probabilistic", "none")
SCENARIO_FORMAT = "cachecran-scenario"
SCENARIO_VERSION = 1

# vertex order puts opposite corners first so truncated layouts stay balanced
_VERTICES = np.array([[-0.5, -0.5], [0.5, 0.5], [0.5, -0.5], [-0.5, 0.5]])


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for one purpose (``topology``, ``fading``, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[purpose], *map(int, keys)]))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed, e.g. one per Monte-Carlo drop."""
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class GeometryConfig:
    rrh_region_side: float = 100.0
    user_region_side: float = 200.0
    rrh_layout: str = "center_plus_vertices"
    rrh_positions: Optional[tuple] = None  # only for rrh_layout == "custom"

    def __post_init__(self):
        if not (self.rrh_region_side > 0 and self.user_region_side > 0):
            raise ValueError("region sides must be positive")
        if self.rrh_layout not in ("center_plus_vertices", "custom"):
            raise ValueError(f"unknown RRH layout {self.rrh_layout!r}")
        if self.rrh_layout == "custom":
            pos = np.asarray(self.rrh_positions, float).reshape(-1, 2) if self.rrh_positions is not None else np.zeros((0, 2))
            if len(pos) == 0:
                raise ValueError("custom layout needs at least one RRH position")
            if np.any(np.abs(pos.mean(axis=0)) > self.user_region_side / 2):
                raise ValueError("user region must contain the centre of the RRH layout")
            object.__setattr__(self, "rrh_positions", tuple(map(tuple, pos.tolist())))


@dataclass(frozen=True)
class ChannelConfig:
    carrier: float = 2e9
    pathloss_fixed_db: float = 38.0
    pathloss_slope_db: float = 30.0
    shadowing_std_db: float = 6.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    num_taps: Optional[int] = None  # None -> N // 4
    tap_decay_db: float = 30.0 / math.log(10.0)  # e^-3 from first to last tap
    min_distance: float = 1.0

    def __post_init__(self):
        if self.shadowing_std_db < 0:
            raise ValueError("shadowing standard deviation must be nonnegative")
        if self.num_taps is not None and self.num_taps < 1:
            raise ValueError("num_taps must be at least 1")

    def taps_for(self, num_subchannels: int) -> int:
        L = self.num_taps if self.num_taps is not None else max(1, num_subchannels // 4)
        if L > num_subchannels:
            raise ValueError(f"num_taps={L} exceeds the number of subchannels {num_subchannels}")
        return L


def noise_power(bandwidth: float, num_subchannels: int, chan_cfg: ChannelConfig = ChannelConfig()) -> float:
    """Per-subchannel noise power in Watts (PSD x B/N x noise figure)."""
    dbm = chan_cfg.noise_psd_dbm_hz + chan_cfg.noise_figure_db + 10 * math.log10(bandwidth / num_subchannels)
    return 10 ** ((dbm - 30) / 10)


def power_delay_profile(num_taps: int, decay_db: float) -> np.ndarray:
    """Exponentially decaying tap powers normalised to unit sum."""
    if num_taps == 1:
        return np.ones(1)
    db = -decay_db * np.arange(num_taps) / (num_taps - 1)
    pdp = 10 ** (db / 10)
    return pdp / pdp.sum()


def gen_topology(geom: GeometryConfig, num_users: int, seed: int, num_rrhs: Optional[int] = None):
    """RRH and user positions in metres, both centred on the origin.

    The default layout puts one RRH in the centre and the rest on the square's
    vertices, so it supports up to five RRHs.
    """
    if geom.rrh_layout == "custom":
        rrh = np.asarray(geom.rrh_positions, float)
        if num_rrhs is not None and num_rrhs != len(rrh):
            raise ValueError(f"custom layout has {len(rrh)} RRHs, configuration asks for {num_rrhs}")
    else:
        M = 5 if num_rrhs is None else num_rrhs
        if not 1 <= M <= 5:
            raise ValueError("center_plus_vertices supports 1 to 5 RRHs; use a custom layout")
        rrh = np.vstack([np.zeros((1, 2)), _VERTICES * geom.rrh_region_side])[:M]
    half = geom.user_region_side / 2
    users = stream(seed, "topology").uniform(-half, half, size=(num_users, 2))
    return rrh, users


def gen_channel(rrh_pos, user_pos, chan_cfg: ChannelConfig, cfg: SystemConfig, seed: int) -> ChannelState:
    """Path loss with log-normal shadowing times frequency-selective Rayleigh fading."""
    rrh_pos = np.asarray(rrh_pos, float)
    user_pos = np.asarray(user_pos, float)
    K, M, N = cfg.num_users, cfg.num_rrhs, cfg.num_subchannels
    if rrh_pos.shape != (M, 2) or user_pos.shape != (K, 2):
        raise ValueError("positions do not match (M, K) of the system configuration")
    d = np.linalg.norm(user_pos[:, None, :] - rrh_pos[None, :, :], axis=-1)
    d = np.maximum(d, chan_cfg.min_distance)
    shadow = stream(seed, "shadowing").normal(0.0, chan_cfg.shadowing_std_db, size=(K, M))
    loss_db = chan_cfg.pathloss_fixed_db + chan_cfg.pathloss_slope_db * np.log10(d) + shadow
    large = 10 ** (-loss_db / 10)

    L = chan_cfg.taps_for(N)
    pdp = power_delay_profile(L, chan_cfg.tap_decay_db)
    rng = stream(seed, "fading")
    taps = (rng.standard_normal((K, M, L)) + 1j * rng.standard_normal((K, M, L))) * np.sqrt(pdp / 2)
    freq = np.fft.fft(taps, n=N, axis=-1)
    return ChannelState(np.sqrt(large)[:, :, None] * freq)


def zipf_pmf(num_contents: int, eta: float) -> np.ndarray:
    if num_contents < 1 or eta < 0:
        raise ValueError("need num_contents >= 1 and eta >= 0")
    w = np.arange(1, num_contents + 1, dtype=float) ** -eta
    return w / w.sum()


def gen_requests(popularity, num_users: int, seed: int) -> np.ndarray:
    """Requested content index for each user, drawn i.i.d. from ``popularity``."""
    pi = np.asarray(popularity, float)
    return stream(seed, "requests").choice(pi.size, size=num_users, p=pi)


def cache_most_popular(popularity, cache_size: int, num_rrhs: int) -> np.ndarray:
    pi = np.asarray(popularity, float)
    if not 0 <= cache_size <= pi.size:
        raise ValueError("cache_size must be in [0, F]")
    top = np.argsort(-pi, kind="stable")[:cache_size]
    c = np.zeros((num_rrhs, pi.size), dtype=np.int8)
    c[:, top] = 1
    return c


def cache_probabilistic(popularity, cache_size: int, num_rrhs: int, seed: int) -> np.ndarray:
    """Each RRH independently draws ``cache_size`` distinct contents by popularity.

    Draws are sequential without replacement, renormalising the remaining
    mass; once the remaining mass is zero the rest are picked uniformly.
    """
    pi = np.asarray(popularity, float)
    F = pi.size
    if not 0 <= cache_size <= F:
        raise ValueError("cache_size must be in [0, F]")
    rng = stream(seed, "caching")
    c = np.zeros((num_rrhs, F), dtype=np.int8)
    for m in range(num_rrhs):
        w = pi.copy()
        for _ in range(cache_size):
            free = c[m] == 0
            w = np.where(free, w, 0.0)
            mass = w.sum()
            probs = w / mass if mass > 0 else free / free.sum()
            c[m, rng.choice(F, p=probs)] = 1
    return c


def cache_none(num_rrhs: int, num_contents: int) -> np.ndarray:
    return np.zeros((num_rrhs, num_contents), dtype=np.int8)


def make_cache(strategy: str, popularity, cache_size: int, num_rrhs: int, seed: int) -> np.ndarray:
    if strategy == "most_popular":
        return cache_most_popular(popularity, cache_size, num_rrhs)
    if strategy == "probabilistic":
        return cache_probabilistic(popularity, cache_size, num_rrhs, seed)
    if strategy == "none":
        return cache_none(num_rrhs, len(popularity))
    raise ValueError(f"unknown caching strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    channel: ChannelState
    content: ContentState
    seed: int
    strategy: str
    zipf_exponent: float
    rrh_positions: np.ndarray
    user_positions: np.ndarray
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    channel_config: ChannelConfig = field(default_factory=ChannelConfig)

    def with_cache(self, cache, strategy: str = "custom") -> "Scenario":
        content = ContentState(cache, self.content.requested, self.content.popularity)
        return Scenario(
            self.config, self.channel, content, self.seed, strategy, self.zipf_exponent,
            self.rrh_positions, self.user_positions, self.geometry, self.channel_config,
        )


def generate_scenario(
    cfg: SystemConfig,
    seed: int,
    strategy: str = "most_popular",
    zipf_exponent: float = 0.9,
    geometry: GeometryConfig = GeometryConfig(),
    channel_config: ChannelConfig = ChannelConfig(),
) -> Scenario:
    rrh, users = gen_topology(geometry, cfg.num_users, seed, cfg.num_rrhs)
    chan = gen_channel(rrh, users, channel_config, cfg, seed)
    pi = zipf_pmf(cfg.num_contents, zipf_exponent)
    requested = gen_requests(pi, cfg.num_users, seed)
    cache = make_cache(strategy, pi, cfg.cache_size, cfg.num_rrhs, seed)
    return Scenario(cfg, chan, ContentState(cache, requested, pi), int(seed), strategy,
                    float(zipf_exponent), rrh, users, geometry, channel_config)


# -- serialization -----------------------------------------------------------
#
# JSON document, keys sorted. Floats are written with Python's shortest
# round-trip repr, so a load/save cycle reproduces every bit. Schema:
#
#   format, version            "cachecran-scenario", 1
#   seed, strategy, zipf_exponent
#   system                     SystemConfig fields; rates in bits/s, powers in W
#   geometry, channel_config   GeometryConfig / ChannelConfig fields
#   positions.rrh, .users      [[x, y], ...] metres
#   channel.shape              [K, M, N]
#   channel.re_im              flat C-order list, re/im interleaved
#   content.cache              M x F nested 0/1 lists
#   content.requested          K content indices
#   content.popularity         F floats


def config_to_dict(cfg: SystemConfig) -> dict:
    return {
        "num_rrhs": cfg.num_rrhs,
        "num_users": cfg.num_users,
        "num_subchannels": cfg.num_subchannels,
        "num_contents": cfg.num_contents,
        "bandwidth": cfg.bandwidth,
        "noise_power": cfg.noise_power,
        "fronthaul_capacity": cfg.fronthaul_capacity.tolist(),
        "min_rate": cfg.min_rate.tolist(),
        "cache_size": cfg.cache_size,
    }


def scenario_to_dict(sc: Scenario) -> dict:
    h = sc.channel.h
    inter = np.stack([h.real, h.imag], axis=-1).ravel()
    return {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "seed": sc.seed,
        "strategy": sc.strategy,
        "zipf_exponent": sc.zipf_exponent,
        "system": config_to_dict(sc.config),
        "geometry": asdict(sc.geometry),
        "channel_config": asdict(sc.channel_config),
        "positions": {"rrh": sc.rrh_positions.tolist(), "users": sc.user_positions.tolist()},
        "channel": {"shape": list(h.shape), "re_im": inter.tolist()},
        "content": {
            "cache": sc.content.cache.tolist(),
            "requested": sc.content.requested.tolist(),
            "popularity": sc.content.popularity.tolist(),
        },
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != SCENARIO_FORMAT:
        raise ValueError("not a cachecran scenario document")
    if d.get("version") != SCENARIO_VERSION:
        raise ValueError(f"unsupported scenario version {d.get('version')!r}")
    cfg = SystemConfig(**d["system"])
    shape = tuple(d["channel"]["shape"])
    ri = np.asarray(d["channel"]["re_im"], float).reshape(*shape, 2)
    chan = ChannelState(ri[..., 0] + 1j * ri[..., 1])
    c = d["content"]
    content = ContentState(np.asarray(c["cache"]), np.asarray(c["requested"]), np.asarray(c["popularity"]))
    chan.check(cfg)
    content.check(cfg)
    geom = dict(d["geometry"])
    if geom.get("rrh_positions") is not None:
        geom["rrh_positions"] = tuple(map(tuple, geom["rrh_positions"]))
    return Scenario(
        cfg, chan, content, int(d["seed"]), d["strategy"], float(d["zipf_exponent"]),
        np.asarray(d["positions"]["rrh"], float).reshape(-1, 2),
        np.asarray(d["positions"]["users"], float).reshape(-1, 2),
        GeometryConfig(**geom), ChannelConfig(**d["channel_config"]),
    )


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), sort_keys=True, indent=1) + "\n"


def loads_scenario(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_scenario(sc))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return loads_scenario(fh.read())
