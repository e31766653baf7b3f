"""Comparison policies: uncoordinated charging and voltage-droop charging."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .fleet import PowerBounds, SocState, Vehicle, power_bounds
from .network import LoadFlowSolution, solve_load_flow
from .coordination import ChargingProfile


@dataclass(frozen=True)
class DroopCurve:
    """Piecewise-linear power/voltage curve: 0 kW up to ``v_zero``, a ramp to
    ``p_ceiling`` at ``v_full``, flat above."""

    v_zero: float = 0.90
    v_full: float = 0.95
    p_ceiling: float = 3.3

    def __post_init__(self):
        if not self.v_zero < self.v_full:
            raise ConfigError("droop curve needs v_zero < v_full")
        if self.p_ceiling <= 0:
            raise ConfigError("droop curve needs p_ceiling > 0")

    def raw(self, v: float) -> float:
        if v <= self.v_zero:
            return 0.0
        if v >= self.v_full:
            return self.p_ceiling
        return self.p_ceiling * (v - self.v_zero) / (self.v_full - self.v_zero)


def droop_power(v_local: float, curve: DroopCurve = DroopCurve(), bounds: PowerBounds | None = None) -> float:
    p = curve.raw(v_local)
    if bounds is not None:
        # the energy deadline overrides the curve
        p = min(max(p, bounds.p_lo), bounds.p_hi)
    return p


def uncoordinated_power(vehicle: Vehicle, soc_state: SocState, slot: int, slot_duration_h: float = 0.5) -> float:
    """Charge flat out from plug-in until full or gone."""
    if not vehicle.present(slot):
        return 0.0
    return power_bounds(vehicle, soc_state, slot, slot_duration_h).p_hi


def run_slot_droop(vehicles: Sequence[Vehicle], bounds: Sequence[PowerBounds], previous_solution: LoadFlowSolution,
                   curve: DroopCurve = DroopCurve()) -> ChargingProfile:
    """Each vehicle reacts to its own node voltage measured in the previous slot."""
    pos = {b: k for k, b in enumerate(previous_solution.bus_ids)}
    p = [droop_power(float(previous_solution.v_mag[pos[v.node]]), curve, b) for v, b in zip(vehicles, bounds)]
    return ChargingProfile(tuple(v.id for v in vehicles), np.array(p, dtype=float))


def run_slot_uncoordinated(vehicles: Sequence[Vehicle], bounds: Sequence[PowerBounds]) -> ChargingProfile:
    return ChargingProfile(tuple(v.id for v in vehicles), np.array([b.p_hi for b in bounds], dtype=float))


def run_slot_droop_steady(vehicles: Sequence[Vehicle], bounds: Sequence[PowerBounds], feeder,
                          curve: DroopCurve = DroopCurve(), damping: float = 0.2, tol_kw: float = 1e-6,
                          max_iter: int = 1000) -> ChargingProfile:
    """Operating point of an instantaneous droop controller.

    Finds the profile where every vehicle sits on the curve at its own,
    simultaneously loaded node voltage. Not the default: the lagged rule of
    :func:`run_slot_droop` is.
    """
    ids = tuple(v.id for v in vehicles)
    p = np.array([b.p_hi for b in bounds], dtype=float)
    if not vehicles:
        return ChargingProfile(ids, p)
    cols = [feeder.index(v.node) for v in vehicles]
    base_p, base_q = feeder.base_injections()
    sol = None
    for _ in range(max_iter):
        inj = base_p.copy()
        inj[cols] -= p
        sol = solve_load_flow(feeder, inj, base_q, warm_start=sol)
        target = np.array([droop_power(float(sol.v_mag[c]), curve, b) for c, b in zip(cols, bounds)])
        if np.max(np.abs(target - p)) <= tol_kw:
            return ChargingProfile(ids, target)
        p = (1.0 - damping) * p + damping * target
    raise NumericalError("steady-state droop iteration did not converge")
