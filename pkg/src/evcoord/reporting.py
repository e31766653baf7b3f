"""Tabular writers for run outputs.

Column order is fixed and floats are written with ``repr`` so files diff
cleanly across runs.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import CalibrationResult
from .network import FeederModel, LoadFlowSolution, SensitivityMatrix
from .scenario import MonteCarloReport, ScenarioResult

SCENARIO_FILES = ("slots.csv", "voltages.csv", "node_profile.csv", "traces.csv", "summary.csv",
                  "vehicles.csv", "warnings.txt")
MONTECARLO_FILES = ("report.csv", "table.csv", "draws.csv")


def _f(x) -> str:
    return repr(float(x))


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def clock(slot: int, start_hours: float, slot_hours: float) -> str:
    minutes = int(round((start_hours + slot * slot_hours) * 60)) % (24 * 60)
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def write_solution(out: Path, feeder: FeederModel, sol: LoadFlowSolution) -> None:
    _write(out / "voltages.csv", ["node", "v_mag_pu", "v_ang_rad"],
           [(b, _f(m), _f(a)) for b, m, a in zip(sol.bus_ids, sol.v_mag, sol.v_ang)])
    _write(out / "solve_info.csv", ["iterations", "max_residual_pu", "min_v_pu", "min_v_node"],
           [(sol.iterations, _f(sol.max_residual), _f(sol.v_mag.min()), sol.bus_ids[int(np.argmin(sol.v_mag))])])


def write_sensitivity(out: Path, sens: SensitivityMatrix) -> None:
    _write(out / "sensitivity.csv", ["pilot"] + [f"p{c}" for c in sens.control_nodes],
           [[p] + [_f(x) for x in row] for p, row in zip(sens.pilot_nodes, sens.s_vp_pc)])


def write_scenario(out: Path, results: dict[str, ScenarioResult], start_hours: float, slot_hours: float,
                   metric: str) -> None:
    slots_rows, volt_rows, prof_rows, trace_rows, sum_rows, veh_rows, warns = [], [], [], [], [], [], []
    bus_ids = None
    for policy, res in results.items():
        s = res.summary
        bus_ids = s.bus_ids
        ref = bus_ids.index(s.reference_node)
        for sr in res.slots:
            v = sr.solution.v_mag
            k = int(np.argmin(v))
            slots_rows.append([policy, sr.slot, clock(sr.slot, start_hours, slot_hours), len(sr.profile.vehicle_ids),
                               _f(sr.total_kw), sr.iterations, sr.termination.value if sr.termination else "",
                               _f(v[k]), bus_ids[k], _f(v[ref]), _f(sr.penalty_quadratic.sum()),
                               _f(sr.penalty_crenel.sum())])
            volt_rows.append([policy, sr.slot, clock(sr.slot, start_hours, slot_hours)] + [_f(x) for x in v])
            if sr.trace is not None:
                for e in sr.trace.entries:
                    prof = ";".join(f"{vid}={_f(p)}" for vid, p in zip(sr.profile.vehicle_ids, e.profile))
                    trace_rows.append([policy, sr.slot, e.iteration, e.updater, _f(e.potential),
                                       _f(e.min_v_pred), prof])
        for b, mv in zip(bus_ids, s.min_voltage):
            prof_rows.append([policy, b, _f(mv)])
        sum_rows.append([policy, metric, s.reference_node, _f(s.reference_min_voltage), _f(s.min_voltage.min()),
                         _f(s.total_penalty_quadratic), _f(s.total_penalty_crenel), _f(s.energy_delivered),
                         s.iterations_total, len(s.soc_violations())])
        for v in res.fleet:
            veh_rows.append([policy, v.id, v.node, _f(v.soc_init), _f(v.soc_min), _f(v.soc_max),
                             _f(s.final_soc[v.id])])
        warns.extend(f"{policy}: {w}" for w in s.warnings)
    _write(out / "slots.csv", ["policy", "slot", "time", "n_vehicles", "total_kw", "iterations", "termination",
                               "min_v", "min_v_node", "ref_v", "penalty_quadratic", "penalty_crenel"], slots_rows)
    _write(out / "voltages.csv", ["policy", "slot", "time"] + [f"v{b}" for b in bus_ids or ()], volt_rows)
    _write(out / "node_profile.csv", ["policy", "node", "min_v"], prof_rows)
    _write(out / "traces.csv", ["policy", "slot", "iter", "updater", "potential", "min_v_pred", "profile"],
           trace_rows)
    _write(out / "summary.csv", ["policy", "metric", "ref_node", "ref_min_v", "min_v", "total_penalty_quadratic",
                                 "total_penalty_crenel", "energy_kwh", "iterations_total", "soc_violations"],
           sum_rows)
    _write(out / "vehicles.csv", ["policy", "id", "node", "soc_init_kwh", "soc_min_kwh", "soc_max_kwh",
                                  "final_soc_kwh"], veh_rows)
    (out / "warnings.txt").write_text("".join(w + "\n" for w in warns))


def write_montecarlo(out: Path, report: MonteCarloReport) -> None:
    rows = []
    for p in report.policies:
        for n in report.fleet_sizes:
            rows.append([p, n, report.n_draws, _f(report.mean(p, n)), _f(report.std(p, n))])
    _write(out / "report.csv", ["policy", "n_vehicles", "draws", "mean_min_v", "std_min_v"], rows)
    header = ["policy"] + [f"mean_{n}" for n in report.fleet_sizes] + [f"std_{n}" for n in report.fleet_sizes]
    table = [[p] + [f"{report.mean(p, n):.3f}" for n in report.fleet_sizes]
             + [f"{report.std(p, n):.3f}" for n in report.fleet_sizes] for p in report.policies]
    _write(out / "table.csv", header, table)
    draws = []
    for p in report.policies:
        for n in report.fleet_sizes:
            for d, s in enumerate(report.summaries[p, n]):
                draws.append([p, n, d, _f(s.reference_min_voltage), _f(s.min_voltage.min()),
                              _f(s.total_penalty_quadratic), _f(s.total_penalty_crenel), _f(s.energy_delivered),
                              s.iterations_total, len(s.soc_violations())])
    _write(out / "draws.csv", ["policy", "n_vehicles", "draw", "ref_min_v", "min_v", "total_penalty_quadratic",
                               "total_penalty_crenel", "energy_kwh", "iterations_total", "soc_violations"], draws)


def write_calibration(out: Path, result: CalibrationResult, feeder_name: str) -> None:
    from .network import write_feeder

    write_feeder(result.feeder, out / feeder_name)
    _write(out / "calibration.csv", ["step", "scale", "mean_uncoordinated_min_v"],
           [(k, _f(s.scale), _f(s.min_voltage)) for k, s in enumerate(result.steps)])
