"""Run configuration: one YAML file plus flat ``key=value`` overrides.

Physical quantities must carry a unit suffix (``20 MHz``, ``40 Mbps``,
``-174 dBm/Hz``, ``100 m``); bare numbers are rejected for them so that a
config never silently mixes Mbps and bits/s. Counts, seeds, exponents and
solver tolerances are plain numbers.

Example::

    preset: desk
    system:
      fronthaul_capacity: 40 Mbps
      cache_size: 2
    scenario:
      seed: 7
      strategy: probabilistic
    sweep:
      swept_param: fronthaul_capacity
      values: [30 Mbps, 40 Mbps, 60 Mbps]
      num_drops: 20
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .harness import SWEPT_PARAMS, SolverSettings, SweepSpec
from .harness import preset as preset_spec
from .model import SystemConfig
from .scenario import STRATEGIES, ChannelConfig, GeometryConfig, noise_power


class ConfigError(ValueError):
    pass


_UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "rate": {"bps": 1.0, "kbps": 1e3, "Mbps": 1e6, "Gbps": 1e9},
    "distance": {"m": 1.0, "km": 1e3},
    "db": {"dB": 1.0},
    "psd": {"dBm/Hz": 1.0},
    "power": {"W": 1.0, "mW": 1e-3, "dBm": None},
}

# section -> key -> kind; kind is a unit family, or "int", "float", "str", "list:<kind>"
SCHEMA: Dict[str, Dict[str, str]] = {
    "system": {
        "num_rrhs": "int", "num_users": "int", "num_subchannels": "int", "num_contents": "int",
        "bandwidth": "frequency", "fronthaul_capacity": "rate", "min_rate": "rate",
        "cache_size": "int", "noise_power": "power",
    },
    "channel": {
        "carrier": "frequency", "pathloss_fixed": "db", "pathloss_slope": "db", "shadowing_std": "db",
        "noise_psd": "psd", "noise_figure": "db", "num_taps": "int", "tap_decay": "db",
        "min_distance": "distance",
    },
    "geometry": {"rrh_region_side": "distance", "user_region_side": "distance"},
    "scenario": {"seed": "int", "strategy": "str", "zipf_exponent": "float"},
    "solver": {"mode": "str", "tol": "float", "radius": "float", "max_iter": "int"},
    "sweep": {
        "swept_param": "str", "values": "list", "strategies": "list:str", "num_drops": "int", "seed": "int",
    },
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)\s*$")


def parse_quantity(text: Any, kind: str) -> float:
    """``"20 MHz"`` -> ``2e7`` for ``kind="frequency"``; bare numbers are rejected."""
    if isinstance(text, bool) or not isinstance(text, str):
        raise ConfigError(f"{text!r} needs a unit ({', '.join(_UNITS[kind])})")
    m = _QTY.match(text)
    if not m:
        raise ConfigError(f"cannot parse {text!r} as a {kind} with unit")
    value, unit = float(m.group(1)), m.group(2)
    table = _UNITS[kind]
    if unit not in table:
        raise ConfigError(f"unit {unit!r} is not a {kind} unit ({', '.join(table)})")
    if kind == "power" and unit == "dBm":
        return 10 ** ((value - 30) / 10)
    return value * table[unit]


def _coerce(section: str, key: str, value: Any):
    kind = SCHEMA[section][key]
    where = f"{section}.{key}"
    try:
        if kind == "int":
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ConfigError(f"expected an integer, got {value!r}")
            return int(value)
        if kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"expected a number, got {value!r}")
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ConfigError(f"expected a string, got {value!r}")
            return value
        if kind == "list:str":
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f"expected a list of names, got {value!r}")
            return list(value)
        if kind == "list":
            if not isinstance(value, list):
                raise ConfigError(f"expected a list, got {value!r}")
            return list(value)  # unit checking needs swept_param, done later
        return parse_quantity(value, kind)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    channel: ChannelConfig
    geometry: GeometryConfig
    seed: int
    strategy: str
    zipf_exponent: float
    solver: SolverSettings
    sweep: SweepSpec
    preset: str = "full"


def _flat_keys() -> Dict[str, str]:
    owners: Dict[str, List[str]] = {}
    for sec, keys in SCHEMA.items():
        for k in keys:
            owners.setdefault(k, []).append(sec)
    return {k: v[0] for k, v in owners.items() if len(v) == 1}


def parse_override(text: str) -> Tuple[str, str, Any]:
    """``"system.cache_size=3"`` or unambiguous ``"cache_size=3"``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
    else:
        flat = _flat_keys()
        if key not in flat:
            sections = [s for s, keys in SCHEMA.items() if key in keys]
            if sections:
                raise ConfigError(f"override key {key!r} is ambiguous; use one of "
                                  + ", ".join(f"{s}.{key}" for s in sections))
            raise ConfigError(f"unknown override key {key!r}")
        section, name = flat[key], key
    if section not in SCHEMA or name not in SCHEMA[section]:
        raise ConfigError(f"unknown override key {key!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    if value is None:
        value = raw
    return section, name, value


def read_document(path: str) -> Dict[str, Any]:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must be a mapping of sections")
    return doc


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunConfig:
    return build_config(read_document(path) if path is not None else {}, overrides)


def build_config(doc: Dict[str, Any], overrides: Sequence[str] = ()) -> RunConfig:
    preset = doc.get("preset", "full")
    if preset not in ("full", "desk"):
        raise ConfigError(f"preset must be 'full' or 'desk', got {preset!r}")
    unknown = set(doc) - set(SCHEMA) - {"preset"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    vals: Dict[str, Dict[str, Any]] = {}
    for section, body in doc.items():
        if section == "preset":
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            vals.setdefault(section, {})[key] = _coerce(section, key, value)
    for text in overrides:
        section, name, value = parse_override(text)
        vals.setdefault(section, {})[name] = _coerce(section, name, value)
    try:
        return _assemble(preset, vals)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _assemble(preset: str, vals: Dict[str, Dict[str, Any]]) -> RunConfig:
    ch = vals.get("channel", {})
    chan = ChannelConfig(**{
        {"pathloss_fixed": "pathloss_fixed_db", "pathloss_slope": "pathloss_slope_db",
         "shadowing_std": "shadowing_std_db", "noise_psd": "noise_psd_dbm_hz",
         "noise_figure": "noise_figure_db", "tap_decay": "tap_decay_db"}.get(k, k): v
        for k, v in ch.items()
    })
    geom = GeometryConfig(**vals.get("geometry", {}))

    sw = vals.get("sweep", {})
    param = sw.get("swept_param", "fronthaul_capacity")
    if param not in SWEPT_PARAMS:
        raise ConfigError(f"sweep.swept_param must be one of {SWEPT_PARAMS}, got {param!r}")
    sysv = dict(vals.get("system", {}))
    template = preset_spec(preset, param).template
    base = {f: getattr(template, f) for f in template.__dataclass_fields__}
    for f in ("fronthaul_capacity", "min_rate"):
        # template vectors are uniform; pass a scalar so the counts may change
        base[f] = float(base[f][0])
    base.update(sysv)
    if "noise_power" not in sysv:
        base["noise_power"] = noise_power(base["bandwidth"], base["num_subchannels"], chan)
    system = SystemConfig(**base)

    sc = vals.get("scenario", {})
    strategy = sc.get("strategy", "most_popular")
    if strategy not in STRATEGIES:
        raise ConfigError(f"scenario.strategy must be one of {STRATEGIES}, got {strategy!r}")
    zipf = sc.get("zipf_exponent", 0.9)
    if not zipf >= 0:
        raise ConfigError("scenario.zipf_exponent must be nonnegative")

    sv = vals.get("solver", {})
    solver = SolverSettings(
        mode=sv.get("mode", "exhaustive" if preset == "desk" else "greedy"),
        tol=sv.get("tol", 1e-4), radius=sv.get("radius", 1e3), max_iter=sv.get("max_iter"),
    )
    if solver.mode not in ("exhaustive", "greedy"):
        raise ConfigError(f"solver.mode must be 'exhaustive' or 'greedy', got {solver.mode!r}")
    if not solver.tol > 0 or not solver.radius > 0:
        raise ConfigError("solver.tol and solver.radius must be positive")

    if "values" in sw:
        if param == "fronthaul_capacity":
            values = tuple(parse_quantity(v, "rate") for v in sw["values"])
        else:
            values = tuple(_coerce("system", "cache_size", v) for v in sw["values"])
    else:
        values = preset_spec(preset, param).values
    if "strategies" in sw and not sw["strategies"]:
        raise ConfigError("sweep.strategies must name at least one strategy")
    sweep = SweepSpec(
        param, values, system, tuple(sw.get("strategies", STRATEGIES)), sw.get("num_drops", 20),
        sw.get("seed", sc.get("seed", 0)), solver, zipf, geom, chan,
    )
    return RunConfig(system, chan, geom, sc.get("seed", 0), strategy, zipf, solver, sweep, preset)
