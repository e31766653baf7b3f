"""Impedance calibration of the surrogate feeder.

Bisection on a uniform impedance scale factor until the mean uncoordinated
minimum voltage at the reference node, over a fixed set of seeded draws, hits
the target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .errors import ConfigError, DivergenceError, NumericalError
from .network import FeederModel
from .scenario import ScenarioConfig, run_monte_carlo

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationStep:
    scale: float
    min_voltage: float  # nan when the load flow collapsed


@dataclass
class CalibrationResult:
    feeder: FeederModel
    scale: float
    achieved: float
    steps: list[CalibrationStep]


def uncoordinated_level(config: ScenarioConfig, feeder: FeederModel, n_vehicles: int, draws: int) -> float:
    cfg = replace(config, feeder=feeder, policy="uncoordinated", fleet=None)
    report = run_monte_carlo(cfg, draws, [n_vehicles], policies=("uncoordinated",))
    return report.mean("uncoordinated", n_vehicles)


def calibrate_feeder(config: ScenarioConfig, template: FeederModel, target_v: float = 0.85,
                     tolerance: float = 0.005, n_vehicles: int = 30, draws: int = 10,
                     scale_lo: float = 0.1, scale_hi: float = 20.0, max_steps: int = 60) -> CalibrationResult:
    """Scale the template's impedances so uncoordinated charging reaches ``target_v``.

    Voltage falls monotonically with the scale, so bisection on
    ``[scale_lo, scale_hi]`` is well posed. A collapsed load flow counts as
    "too low".
    """
    if not 0 < scale_lo < scale_hi:
        raise ConfigError("calibration needs 0 < scale_lo < scale_hi")
    steps: list[CalibrationStep] = []

    def level(scale):
        try:
            v = uncoordinated_level(config, template.scaled(scale), n_vehicles, draws)
        except (DivergenceError, NumericalError):
            v = float("nan")
        steps.append(CalibrationStep(scale, v))
        log.info("scale %.6g -> %.6g pu", scale, v)
        return v

    v_lo = level(scale_lo)
    if not v_lo >= target_v:
        raise NumericalError(f"target {target_v} unreachable: even scale {scale_lo} gives {v_lo:.4f} pu")
    v_hi = level(scale_hi)
    if v_hi == v_hi and v_hi > target_v:
        raise NumericalError(f"target {target_v} unreachable: scale {scale_hi} still gives {v_hi:.4f} pu")
    lo, hi = scale_lo, scale_hi
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        v = level(mid)
        if v == v and abs(v - target_v) <= tolerance / 10:
            return CalibrationResult(template.scaled(mid), mid, v, steps)
        if v == v and v > target_v:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    v = level(mid)
    if not (v == v and abs(v - target_v) <= tolerance):
        raise NumericalError(f"calibration did not reach {target_v} within {tolerance}")
    return CalibrationResult(template.scaled(mid), mid, v, steps)
