"""Electric-vehicle population: state of charge, per-slot power bounds and
seeded fleet sampling.

Energies are kWh, powers kW, durations hours. Slots are indexed from the start
of the night horizon; a vehicle is plugged in for slots
``arrival_slot <= t < departure_slot``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, InfeasibilityError

P_MAX_RANGE = (3.0, 48.0)
DEFAULT_P_MAX = 3.3
# absorbs float round-off when a slot exactly fills or exactly meets a target
SOC_SNAP = 1e-9


@dataclass(frozen=True)
class Vehicle:
    id: int
    node: int
    soc_init: float
    soc_min: float
    soc_max: float
    p_max: float = DEFAULT_P_MAX
    arrival_slot: int = 0
    departure_slot: int = 1

    def __post_init__(self):
        if not 0.0 <= self.soc_init <= self.soc_max:
            raise ConfigError(f"vehicle {self.id}: need 0 <= soc_init <= soc_max")
        if self.soc_min > self.soc_max:
            raise ConfigError(f"vehicle {self.id}: soc_min exceeds soc_max")
        if self.arrival_slot >= self.departure_slot:
            raise ConfigError(f"vehicle {self.id}: arrival_slot must precede departure_slot")
        lo, hi = P_MAX_RANGE
        if not lo <= self.p_max <= hi:
            raise ConfigError(f"vehicle {self.id}: p_max {self.p_max} kW outside [{lo}, {hi}]")

    def present(self, slot: int) -> bool:
        return self.arrival_slot <= slot < self.departure_slot

    def initial_state(self) -> "SocState":
        return SocState(self.id, self.soc_init, self.arrival_slot)


@dataclass(frozen=True)
class SocState:
    vehicle_id: int
    soc_now: float
    slot: int


@dataclass(frozen=True)
class PowerBounds:
    p_lo: float
    p_hi: float

    def contains(self, p: float, tol: float = 1e-9) -> bool:
        return self.p_lo - tol <= p <= self.p_hi + tol


def _hours(text) -> float:
    if isinstance(text, (int, float)):
        return float(text)
    hh, mm = str(text).split(":")
    return int(hh) + int(mm) / 60.0


@dataclass(frozen=True)
class FleetSpec:
    n_vehicles: int
    battery_kwh: float = 24.0
    range_km: float = 150.0
    need_km_mean: float = 30.0
    need_km_std: float = 3.0
    arrival_mean: str = "18:45"
    arrival_std_min: float = 60.0
    departure_mean: str = "08:00"
    departure_std_min: float = 45.0
    p_max: float = DEFAULT_P_MAX
    horizon_start: str = "17:00"
    horizon_end: str = "10:00"
    slot_minutes: float = 30.0
    placement: Sequence[int] | None = field(default=None)

    @property
    def slot_hours(self) -> float:
        return self.slot_minutes / 60.0

    @property
    def horizon_hours(self) -> float:
        return (_hours(self.horizon_end) - _hours(self.horizon_start)) % 24.0

    @property
    def n_slots(self) -> int:
        return int(round(self.horizon_hours / self.slot_hours))

    def offset_hours(self, clock) -> float:
        """Hours from horizon start to a clock time, wrapping past midnight."""
        return (_hours(clock) - _hours(self.horizon_start)) % 24.0


def energy_need_from_distance(distance_km: float, battery_kwh: float = 24.0, range_km: float = 150.0) -> float:
    if distance_km < 0:
        raise ValueError(f"negative distance {distance_km}")
    return distance_km * (battery_kwh / range_km)


def power_bounds(vehicle: Vehicle, soc_state: SocState, slot: int, slot_duration_h: float) -> PowerBounds:
    """Feasible charging power for ``slot`` given the current state of charge.

    The floor is whatever must be drawn now so that charging at ``p_max`` in
    every later slot still reaches ``soc_min`` by departure.
    """
    if not vehicle.present(slot):
        raise ContractError(f"vehicle {vehicle.id} is not plugged in at slot {slot}")
    dt = slot_duration_h
    later = vehicle.departure_slot - slot - 1
    deficit = vehicle.soc_min - soc_state.soc_now
    if deficit > vehicle.p_max * dt * (later + 1) + SOC_SNAP:
        raise InfeasibilityError(
            f"vehicle {vehicle.id} cannot reach soc_min {vehicle.soc_min} kWh by slot "
            f"{vehicle.departure_slot} (deficit {deficit:.4f} kWh at slot {slot})", vehicle.id)
    p_hi = min(vehicle.p_max, max(0.0, (vehicle.soc_max - soc_state.soc_now) / dt))
    p_lo = max(0.0, deficit / dt - vehicle.p_max * later)
    p_lo = min(p_lo, vehicle.p_max)
    if p_lo > p_hi:
        if p_lo - p_hi <= SOC_SNAP / dt:
            p_lo = p_hi
        else:
            raise InfeasibilityError(f"vehicle {vehicle.id}: empty power interval at slot {slot}", vehicle.id)
    return PowerBounds(p_lo, p_hi)


def step_soc(soc_state: SocState, p_kw: float, slot_duration_h: float, vehicle: Vehicle | None = None,
             bounds: PowerBounds | None = None) -> SocState:
    if bounds is not None and not bounds.contains(p_kw):
        raise ContractError(
            f"vehicle {soc_state.vehicle_id}: {p_kw} kW outside [{bounds.p_lo}, {bounds.p_hi}]")
    if p_kw < 0:
        raise ContractError(f"vehicle {soc_state.vehicle_id}: negative charging power {p_kw}")
    soc = soc_state.soc_now + p_kw * slot_duration_h
    if vehicle is not None:
        if soc > vehicle.soc_max + SOC_SNAP:
            raise ContractError(f"vehicle {vehicle.id}: charging past soc_max")
        for target in (vehicle.soc_min, vehicle.soc_max):
            if abs(soc - target) <= SOC_SNAP:
                soc = target
        soc = min(soc, vehicle.soc_max)
    return SocState(soc_state.vehicle_id, soc, soc_state.slot + 1)


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, lo: float, hi: float) -> float:
    if std <= 0:
        return min(max(mean, lo), hi)
    while True:
        x = rng.normal(mean, std)
        if lo <= x <= hi:
            return float(x)


def sample_fleet(spec: FleetSpec, rng_seed, candidate_nodes: Sequence[int]) -> list[Vehicle]:
    """Draw a fleet. Deterministic for a given seed.

    ``rng_seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    Placement is uniform without replacement over ``candidate_nodes`` unless
    ``spec.placement`` fixes it.
    """
    rng = np.random.default_rng(rng_seed)
    n = spec.n_vehicles
    if spec.placement is not None:
        nodes = list(spec.placement)
        if len(nodes) != n or len(set(nodes)) != n:
            raise ConfigError("explicit placement must list n_vehicles distinct nodes")
        bad = set(nodes) - set(candidate_nodes)
        if bad:
            raise ConfigError(f"placement uses nodes that cannot host a vehicle: {sorted(bad)}")
    else:
        if n > len(candidate_nodes):
            raise ConfigError(f"{n} vehicles but only {len(candidate_nodes)} nodes (one vehicle per node)")
        nodes = [int(x) for x in rng.choice(np.asarray(candidate_nodes), size=n, replace=False)]
    dt = spec.slot_hours
    horizon = spec.horizon_hours
    arr_mu = spec.offset_hours(spec.arrival_mean)
    dep_mu = spec.offset_hours(spec.departure_mean)
    fleet = []
    for k in range(n):
        dist = _truncated_normal(rng, spec.need_km_mean, spec.need_km_std, 0.0, spec.range_km)
        need = energy_need_from_distance(dist, spec.battery_kwh, spec.range_km)
        while True:
            arr = _truncated_normal(rng, arr_mu, spec.arrival_std_min / 60.0, 0.0, horizon)
            dep = _truncated_normal(rng, dep_mu, spec.departure_std_min / 60.0, 0.0, horizon)
            a_slot = int(math.floor(arr / dt))
            d_slot = int(math.floor(dep / dt))
            if d_slot > a_slot:
                break
        fleet.append(Vehicle(id=k + 1, node=nodes[k], soc_init=spec.battery_kwh - need,
                             soc_min=spec.battery_kwh, soc_max=spec.battery_kwh, p_max=spec.p_max,
                             arrival_slot=a_slot, departure_slot=d_slot))
    return fleet


def sample_distances(spec: FleetSpec, rng_seed, size: int) -> np.ndarray:
    """Trip distances only, drawn with the same truncation rule as :func:`sample_fleet`."""
    rng = np.random.default_rng(rng_seed)
    return np.array([_truncated_normal(rng, spec.need_km_mean, spec.need_km_std, 0.0, spec.range_km)
                     for _ in range(size)])


# ---------------------------------------------------------------------------
# fleet file
# ---------------------------------------------------------------------------

FLEET_COLUMNS = ["id", "node", "soc_init_kwh", "soc_min_kwh", "soc_max_kwh", "p_max_kw",
                 "arrival_slot", "departure_slot"]


def parse_fleet(text: str, source: str = "<fleet>") -> list[Vehicle]:
    reader = csv.reader(io.StringIO(text))
    rows = [(k, r) for k, r in enumerate(reader, start=1) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0][1]] != FLEET_COLUMNS:
        raise ConfigError(f"{source}:1: expected header {','.join(FLEET_COLUMNS)}")
    fleet = []
    for lineno, r in rows[1:]:
        if len(r) != len(FLEET_COLUMNS):
            raise ConfigError(f"{source}:{lineno}: expected {len(FLEET_COLUMNS)} fields")
        try:
            fleet.append(Vehicle(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]),
                                 float(r[5]), int(r[6]), int(r[7])))
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    nodes = [v.node for v in fleet]
    if len(set(nodes)) != len(nodes):
        raise ConfigError(f"{source}: at most one vehicle per node")
    return fleet


def read_fleet(path) -> list[Vehicle]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"fleet file not found: {path}")
    return parse_fleet(path.read_text(), str(path))


def serialize_fleet(fleet: Sequence[Vehicle]) -> str:
    out = io.StringIO()
    out.write(",".join(FLEET_COLUMNS) + "\n")
    for v in fleet:
        out.write(f"{v.id},{v.node},{v.soc_init!r},{v.soc_min!r},{v.soc_max!r},{v.p_max!r},"
                  f"{v.arrival_slot},{v.departure_slot}\n")
    return out.getvalue()


def clip_to_horizon(fleet: Sequence[Vehicle], n_slots: int) -> tuple[list[Vehicle], list[str]]:
    """Truncate windows that leave the horizon; returns the fleet and warning records."""
    out, warnings = [], []
    for v in fleet:
        a = min(max(v.arrival_slot, 0), n_slots - 1)
        d = min(max(v.departure_slot, a + 1), n_slots)
        if (a, d) != (v.arrival_slot, v.departure_slot):
            warnings.append(f"vehicle {v.id}: window [{v.arrival_slot}, {v.departure_slot}) "
                            f"truncated to [{a}, {d})")
            v = replace(v, arrival_slot=a, departure_slot=d)
        out.append(v)
    return out, warnings
