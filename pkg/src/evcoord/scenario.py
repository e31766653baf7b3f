"""Night-horizon simulation and the Monte Carlo harness over EV placements."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .baselines import DroopCurve, run_slot_droop, run_slot_droop_steady, run_slot_uncoordinated
from .coordination import (ChargingProfile, IterationTrace, PolicyConfig, Schedule, Scope,
                           TerminationCause, run_slot_brd)
from .errors import ConfigError, ContractError
from .fleet import FleetSpec, SocState, Vehicle, clip_to_horizon, power_bounds, sample_fleet, step_soc
from .metrics import ObjectiveContext, PenaltyKind, VoltageBand, default_neighborhoods, penalty
from .network import (FeederModel, LoadFlowSolution, SURROGATE_DEEPEST, compute_jacobian,
                      extract_sensitivity, solve_load_flow)

log = logging.getLogger(__name__)

POLICIES = ("uncoordinated", "droop", "global-async", "global-sync", "local-async", "local-sync")
MC_POLICIES = ("uncoordinated", "droop", "global-async", "local-async")


def brd_policy(name: str, template: PolicyConfig) -> PolicyConfig | None:
    """PolicyConfig for a BRD policy name, ``None`` for the two baselines."""
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")
    if name in ("uncoordinated", "droop"):
        return None
    scope, schedule = name.split("-")
    return replace(template, scope=Scope(scope), schedule=Schedule(schedule))


@dataclass(frozen=True)
class ScenarioConfig:
    feeder: FeederModel
    fleet_spec: FleetSpec
    policy: str = "global-async"
    brd: PolicyConfig = PolicyConfig()
    fleet: tuple[Vehicle, ...] | None = None
    band: VoltageBand = VoltageBand()
    v_ref: float = 0.0
    pilot_nodes: tuple[int, ...] | None = None
    neighborhoods: Mapping[int, Sequence[int]] | None = None
    droop: DroopCurve = DroopCurve()
    droop_mode: str = "lagged"
    reference_node: int = SURROGATE_DEEPEST
    seed: int = 2013

    def __post_init__(self):
        brd_policy(self.policy, self.brd)
        if self.droop_mode not in ("lagged", "steady"):
            raise ConfigError(f"unknown droop mode {self.droop_mode!r}")
        if self.reference_node not in self.feeder.bus_ids:
            raise ConfigError(f"reference node {self.reference_node} is not a feeder bus")

    @property
    def penalty_kind(self) -> PenaltyKind:
        return self.brd.penalty_kind

    @property
    def pilots(self) -> tuple[int, ...]:
        return tuple(self.pilot_nodes) if self.pilot_nodes is not None else tuple(self.feeder.non_slack_ids)

    @property
    def neighborhood_map(self):
        if self.neighborhoods is not None:
            return self.neighborhoods
        return default_neighborhoods(self.pilots)


@dataclass
class SlotResult:
    slot: int
    profile: ChargingProfile
    solution: LoadFlowSolution
    penalty_quadratic: np.ndarray
    penalty_crenel: np.ndarray
    iterations: int
    termination: TerminationCause | None
    trace: IterationTrace | None = None

    @property
    def total_kw(self) -> float:
        return float(np.sum(self.profile.p_kw))


@dataclass
class RunSummary:
    policy: str
    bus_ids: tuple[int, ...]
    min_voltage: np.ndarray
    reference_node: int
    total_penalty_quadratic: float
    total_penalty_crenel: float
    energy_delivered: float
    soc_init: dict[int, float]
    final_soc: dict[int, float]
    soc_min: dict[int, float]
    soc_max: dict[int, float]
    iterations_total: int
    warnings: list[str] = field(default_factory=list)

    @property
    def reference_min_voltage(self) -> float:
        return float(self.min_voltage[self.bus_ids.index(self.reference_node)])

    def soc_violations(self) -> list[int]:
        return [vid for vid, soc in self.final_soc.items()
                if not self.soc_min[vid] <= soc <= self.soc_max[vid]]


@dataclass
class ScenarioResult:
    slots: list[SlotResult]
    summary: RunSummary
    fleet: list[Vehicle]


def _loads(feeder: FeederModel, ev_kw_by_node: Mapping[int, float]):
    p, q = feeder.base_injections()
    for node, kw in ev_kw_by_node.items():
        p[feeder.index(node)] -= kw
    return p, q


def prepare_fleet(config: ScenarioConfig) -> tuple[list[Vehicle], list[str]]:
    fleet = list(config.fleet) if config.fleet is not None else sample_fleet(
        config.fleet_spec, config.seed, config.feeder.non_slack_ids)
    for v in fleet:
        if v.node == config.feeder.slack_id or v.node not in config.feeder.bus_ids:
            raise ConfigError(f"vehicle {v.id} sits on invalid node {v.node}")
    fleet, warnings = clip_to_horizon(fleet, config.fleet_spec.n_slots)
    return sorted(fleet, key=lambda v: v.id), warnings


def run_scenario(config: ScenarioConfig, fleet: Sequence[Vehicle] | None = None,
                 keep_traces: bool = False) -> ScenarioResult:
    """Simulate every slot of the horizon under ``config.policy``."""
    if fleet is None:
        fleet, warnings = prepare_fleet(config)
    else:
        fleet, warnings = clip_to_horizon(sorted(fleet, key=lambda v: v.id), config.fleet_spec.n_slots)
    for w in warnings:
        log.warning(w)
    feeder = config.feeder
    spec = config.fleet_spec
    dt = spec.slot_hours
    policy = brd_policy(config.policy, config.brd)
    pilots = config.pilots
    neighborhoods = config.neighborhood_map if policy is not None and policy.scope is Scope.LOCAL else None

    states = {v.id: v.initial_state() for v in fleet}
    last_kw = {v.id: 0.0 for v in fleet}
    base_p, base_q = feeder.base_injections()
    previous = solve_load_flow(feeder, base_p, base_q)
    slots: list[SlotResult] = []
    energy = 0.0
    for t in range(spec.n_slots):
        present = [v for v in fleet if v.present(t)]
        bounds = [power_bounds(v, states[v.id], t, dt) for v in present]
        trace = None
        cause = None
        iterations = 0
        if config.policy == "uncoordinated":
            profile = run_slot_uncoordinated(present, bounds)
        elif config.policy == "droop" and config.droop_mode == "steady":
            profile = run_slot_droop_steady(present, bounds, feeder, config.droop)
        elif config.policy == "droop":
            profile = run_slot_droop(present, bounds, previous, config.droop)
        elif not present:
            profile = ChargingProfile((), np.zeros(0))
        else:
            p_ref = np.array([last_kw[v.id] for v in present])
            op = solve_load_flow(feeder, *_loads(feeder, {v.node: last_kw[v.id] for v in present}),
                                 warm_start=previous)
            sens = extract_sensitivity(compute_jacobian(feeder, op), pilots, [v.node for v in present])
            ctx = ObjectiveContext.from_sensitivity(
                sens, feeder.base_power, v_ref=config.v_ref, band=config.band, kind=policy.penalty_kind,
                neighborhood_map=neighborhoods, p_reference=p_ref)
            profile, trace, cause = run_slot_brd(present, bounds, ctx, policy)
            iterations = trace.updates
        applied = {v.node: float(p) for v, p in zip(present, profile.p_kw)}
        true = solve_load_flow(feeder, *_loads(feeder, applied), warm_start=previous)
        for v, p, b in zip(present, profile.p_kw, bounds):
            states[v.id] = step_soc(states[v.id], float(p), dt, v, b)
            energy += float(p) * dt
        last_kw = {v.id: 0.0 for v in fleet}
        last_kw.update({v.id: float(p) for v, p in zip(present, profile.p_kw)})
        slots.append(SlotResult(t, profile, true,
                                penalty(true.v_mag, config.band, PenaltyKind.QUADRATIC),
                                penalty(true.v_mag, config.band, PenaltyKind.CRENEL),
                                iterations, cause, trace if keep_traces else None))
        previous = true

    v_all = np.array([s.solution.v_mag for s in slots]) if slots else previous.v_mag[None, :]
    summary = RunSummary(
        policy=config.policy,
        bus_ids=tuple(feeder.bus_ids),
        min_voltage=v_all.min(axis=0),
        reference_node=config.reference_node,
        total_penalty_quadratic=float(sum(s.penalty_quadratic.sum() for s in slots)),
        total_penalty_crenel=float(sum(s.penalty_crenel.sum() for s in slots)),
        energy_delivered=energy,
        soc_init={v.id: v.soc_init for v in fleet},
        final_soc={v.id: states[v.id].soc_now for v in fleet},
        soc_min={v.id: v.soc_min for v in fleet},
        soc_max={v.id: v.soc_max for v in fleet},
        iterations_total=sum(s.iterations for s in slots),
        warnings=warnings,
    )
    bad = summary.soc_violations()
    if bad:
        raise ContractError(f"state-of-charge guarantee broken for vehicles {bad}")
    return ScenarioResult(slots, summary, fleet)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class MonteCarloReport:
    policies: tuple[str, ...]
    fleet_sizes: tuple[int, ...]
    n_draws: int
    seed: int
    reference_node: int
    # (policy, size) -> per-draw reference-node min voltage
    min_voltage: dict[tuple[str, int], list[float]]
    summaries: dict[tuple[str, int], list[RunSummary]]

    def mean(self, policy: str, size: int) -> float:
        return float(np.mean(self.min_voltage[policy, size]))

    def std(self, policy: str, size: int) -> float:
        # population std: a single draw reports 0, not NaN
        return float(np.std(self.min_voltage[policy, size]))


def draw_seed(master_seed: int, fleet_size: int, draw: int) -> np.random.SeedSequence:
    """Per-draw seed; stable whatever other sizes or draw counts are requested."""
    return np.random.SeedSequence(master_seed, spawn_key=(fleet_size, draw))


def _run_draw(args):
    config, size, draw, policies = args
    spec = replace(config.fleet_spec, n_vehicles=size, placement=None)
    fleet = sample_fleet(spec, draw_seed(config.seed, size, draw), config.feeder.non_slack_ids)
    cfg = replace(config, fleet_spec=spec, fleet=None)
    out = []
    for name in policies:
        out.append(run_scenario(replace(cfg, policy=name), fleet=fleet).summary)
    return out


def run_monte_carlo(config: ScenarioConfig, n_draws: int, fleet_sizes: Sequence[int],
                    policies: Sequence[str] = MC_POLICIES, n_jobs: int = 1) -> MonteCarloReport:
    """Every policy runs on the identical sampled fleet within a draw."""
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    for name in policies:
        brd_policy(name, config.brd)
    units = [(config, size, d, tuple(policies)) for size in fleet_sizes for d in range(n_draws)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_draw, units))
    else:
        results = [_run_draw(u) for u in units]
    mins: dict[tuple[str, int], list[float]] = {}
    sums: dict[tuple[str, int], list[RunSummary]] = {}
    for (_, size, _, _), per_policy in zip(units, results):
        for name, summary in zip(policies, per_policy):
            mins.setdefault((name, size), []).append(summary.reference_min_voltage)
            sums.setdefault((name, size), []).append(summary)
    return MonteCarloReport(tuple(policies), tuple(fleet_sizes), n_draws, config.seed,
                            config.reference_node, mins, sums)
