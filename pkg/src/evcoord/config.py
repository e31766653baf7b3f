"""Run configuration: a versioned YAML document.

Unknown keys are errors. Diagnostics carry the file and line of the
offending key.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .baselines import DroopCurve
from .coordination import PolicyConfig
from .errors import ConfigError
from .fleet import FleetSpec, read_fleet
from .metrics import PenaltyKind, VoltageBand, neighborhoods_from_groups, parse_neighborhoods
from .network import BUNDLED_FEEDER, FeederModel, read_feeder, surrogate_template
from .scenario import MC_POLICIES, POLICIES, ScenarioConfig

SCHEMA_VERSION = 1
DEFAULT_CONFIG = Path(__file__).with_name("data") / "example.yaml"

_ANY = object()

# key -> default; nested dicts are sub-schemas
SCHEMA: dict[str, Any] = {
    "version": SCHEMA_VERSION,
    "feeder": "builtin",
    "base_load": {"p_kw": None, "q_kvar": None},
    "fleet": {
        "n_vehicles": 30,
        "battery_kwh": 24.0,
        "range_km": 150.0,
        "need_km_mean": 30.0,
        "need_km_std": 3.0,
        "arrival_mean": "18:45",
        "arrival_std_min": 60.0,
        "departure_mean": "08:00",
        "departure_std_min": 45.0,
        "p_max_kw": 3.3,
        "placement": "random",
        "file": None,
    },
    "horizon": {"start": "17:00", "end": "10:00", "slot_minutes": 30.0},
    "policies": list(POLICIES),
    "policy": {"metric": "quadratic", "max_rounds": 100, "br_grid": 331, "order": "fixed", "order_seed": 0},
    "band": {"v_lo": 0.9, "v_hi": 1.1},
    "v_ref": 0.0,
    "pilot_nodes": "all",
    "neighborhoods": _ANY,
    "droop": {"v_zero": 0.9, "v_full": 0.95, "p_ceiling": 3.3, "mode": "lagged"},
    "reference_node": 34,
    "seed": 2013,
    "montecarlo": {"draws": 10, "fleet_sizes": [10, 20, 30], "policies": list(MC_POLICIES), "jobs": 1},
    "calibrate": {
        "template": "builtin",
        "target_v": 0.85,
        "tolerance": 0.005,
        "n_vehicles": 30,
        "draws": 10,
        "scale_lo": 0.1,
        "scale_hi": 20.0,
        "output": "feeder.csv",
    },
}


def _line_map(node, path=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _merge(schema, data, path, lines, source):
    where = lambda p: f"{source}:{lines.get(p, 1)}"  # noqa: E731
    if not isinstance(data, dict):
        raise ConfigError(f"{where(path)}: '{'.'.join(path)}' must be a mapping")
    out = {}
    for key in data:
        if key not in schema:
            dotted = ".".join(path + (key,))
            raise ConfigError(f"{where(path + (key,))}: unknown key '{dotted}'")
    for key, default in schema.items():
        if isinstance(default, dict):
            out[key] = _merge(default, data.get(key, {}) or {}, path + (key,), lines, source)
        else:
            out[key] = data.get(key, None if default is _ANY else default)
    return out


@dataclass
class RunConfig:
    """Validated configuration plus the resolved objects derived from it."""

    raw: dict
    source: Path | None
    scenario: ScenarioConfig
    policies: tuple[str, ...]

    @property
    def montecarlo(self) -> dict:
        return self.raw["montecarlo"]

    @property
    def calibrate(self) -> dict:
        return self.raw["calibrate"]

    def resolve(self, value: str) -> Path:
        p = Path(value)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def _err(source, lines, path, msg):
    return ConfigError(f"{source}:{lines.get(path, 1)}: {'.'.join(path)}: {msg}")


def _num(v, source, lines, path, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err(source, lines, path, f"expected a number, got {v!r}")
    if positive and v <= 0:
        raise _err(source, lines, path, "must be positive")
    return float(v)


def _clock(v, source, lines, path):
    if not isinstance(v, str) or ":" not in v:
        raise _err(source, lines, path, f"expected a quoted HH:MM string, got {v!r}")
    return v


def load_feeder_ref(value: str, base_dir: Path | None) -> FeederModel:
    if value == "builtin":
        return read_feeder(BUNDLED_FEEDER)
    if value == "template":
        return surrogate_template()
    p = Path(value)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return read_feeder(p)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    lines = _line_map(node) if node is not None else {}
    raw = _merge(SCHEMA, data or {}, (), lines, source)
    if raw["version"] != SCHEMA_VERSION:
        raise _err(source, lines, ("version",), f"unsupported schema version {raw['version']!r}")

    feeder = load_feeder_ref(raw["feeder"], base_dir)
    bl = raw["base_load"]
    if (bl["p_kw"] is None) != (bl["q_kvar"] is None):
        raise _err(source, lines, ("base_load",), "give both p_kw and q_kvar or neither")
    if bl["p_kw"] is not None:
        feeder = feeder.with_base_load(_num(bl["p_kw"], source, lines, ("base_load", "p_kw")),
                                       _num(bl["q_kvar"], source, lines, ("base_load", "q_kvar")))

    f, h = raw["fleet"], raw["horizon"]
    placement = f["placement"]
    if placement != "random":
        if not isinstance(placement, list) or not all(isinstance(x, int) for x in placement):
            raise _err(source, lines, ("fleet", "placement"), "expected 'random' or a list of bus ids")
    spec = FleetSpec(
        n_vehicles=int(f["n_vehicles"]),
        battery_kwh=_num(f["battery_kwh"], source, lines, ("fleet", "battery_kwh"), True),
        range_km=_num(f["range_km"], source, lines, ("fleet", "range_km"), True),
        need_km_mean=_num(f["need_km_mean"], source, lines, ("fleet", "need_km_mean")),
        need_km_std=_num(f["need_km_std"], source, lines, ("fleet", "need_km_std")),
        arrival_mean=_clock(f["arrival_mean"], source, lines, ("fleet", "arrival_mean")),
        arrival_std_min=_num(f["arrival_std_min"], source, lines, ("fleet", "arrival_std_min")),
        departure_mean=_clock(f["departure_mean"], source, lines, ("fleet", "departure_mean")),
        departure_std_min=_num(f["departure_std_min"], source, lines, ("fleet", "departure_std_min")),
        p_max=_num(f["p_max_kw"], source, lines, ("fleet", "p_max_kw"), True),
        horizon_start=_clock(h["start"], source, lines, ("horizon", "start")),
        horizon_end=_clock(h["end"], source, lines, ("horizon", "end")),
        slot_minutes=_num(h["slot_minutes"], source, lines, ("horizon", "slot_minutes"), True),
        placement=None if placement == "random" else tuple(placement),
    )
    fleet = None
    if f["file"] is not None:
        fp = Path(f["file"])
        fleet = tuple(read_fleet(fp if fp.is_absolute() or base_dir is None else base_dir / fp))
        spec = replace(spec, n_vehicles=len(fleet))

    pol = raw["policy"]
    try:
        kind = PenaltyKind(pol["metric"])
    except ValueError:
        raise _err(source, lines, ("policy", "metric"), f"unknown metric {pol['metric']!r}") from None
    try:
        brd = PolicyConfig(penalty_kind=kind, max_rounds=int(pol["max_rounds"]), br_grid=int(pol["br_grid"]),
                           order=pol["order"], order_seed=int(pol["order_seed"]))
    except Exception as exc:
        raise _err(source, lines, ("policy",), str(exc)) from None

    policies = raw["policies"]
    if not isinstance(policies, list) or not policies or any(p not in POLICIES for p in policies):
        raise _err(source, lines, ("policies",), f"expected a non-empty list drawn from {', '.join(POLICIES)}")

    pilots = raw["pilot_nodes"]
    if pilots == "all":
        pilot_nodes = None
        pilot_list = tuple(feeder.non_slack_ids)
    elif isinstance(pilots, list) and all(isinstance(x, int) for x in pilots):
        pilot_nodes = pilot_list = tuple(pilots)
        bad = set(pilots) - set(feeder.non_slack_ids)
        if bad:
            raise _err(source, lines, ("pilot_nodes",), f"not non-slack buses: {sorted(bad)}")
    else:
        raise _err(source, lines, ("pilot_nodes",), "expected 'all' or a list of bus ids")

    nb = raw["neighborhoods"]
    if nb is None or nb == "default":
        neighborhoods = None
    elif isinstance(nb, dict) and set(nb) == {"groups"}:
        neighborhoods = neighborhoods_from_groups(nb["groups"], pilot_list)
    elif isinstance(nb, dict) and set(nb) == {"file"}:
        fp = Path(nb["file"])
        fp = fp if fp.is_absolute() or base_dir is None else base_dir / fp
        if not fp.is_file():
            raise _err(source, lines, ("neighborhoods", "file"), f"file not found: {fp}")
        neighborhoods = parse_neighborhoods(fp.read_text(), str(fp))
    else:
        raise _err(source, lines, ("neighborhoods",), "expected 'default', {groups: [...]} or {file: PATH}")

    d = raw["droop"]
    if d["mode"] not in ("lagged", "steady"):
        raise _err(source, lines, ("droop", "mode"), "expected 'lagged' or 'steady'")
    scenario = ScenarioConfig(
        feeder=feeder,
        fleet_spec=spec,
        policy=policies[0],
        brd=brd,
        fleet=fleet,
        band=VoltageBand(_num(raw["band"]["v_lo"], source, lines, ("band", "v_lo")),
                         _num(raw["band"]["v_hi"], source, lines, ("band", "v_hi"))),
        v_ref=_num(raw["v_ref"], source, lines, ("v_ref",)),
        pilot_nodes=pilot_nodes,
        neighborhoods=neighborhoods,
        droop=DroopCurve(_num(d["v_zero"], source, lines, ("droop", "v_zero")),
                         _num(d["v_full"], source, lines, ("droop", "v_full")),
                         _num(d["p_ceiling"], source, lines, ("droop", "p_ceiling"), True)),
        droop_mode=d["mode"],
        reference_node=int(raw["reference_node"]),
        seed=int(raw["seed"]),
    )
    mc = raw["montecarlo"]
    if any(p not in POLICIES for p in mc["policies"]):
        raise _err(source, lines, ("montecarlo", "policies"), "unknown policy name")
    return RunConfig(raw, Path(source) if base_dir is not None else None, scenario, tuple(policies))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path), path.parent)
