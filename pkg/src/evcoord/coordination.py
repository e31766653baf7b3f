"""Best-response dynamics for one time slot.

The aggregator holds the linearised voltage model of the slot. Vehicles take
turns (asynchronous) or move together (synchronous) to the charging power that
minimises their objective, global or restricted to their neighborhood. A run
stops when nobody moves, when a profile repeats, or at the round cap.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ContractError, InfeasibilityError
from .fleet import PowerBounds, Vehicle
from .metrics import ObjectiveContext, PenaltyKind, penalty

IMPROVEMENT_TOL = 1e-10
QUANTUM_KW = 1e-9


class Schedule(enum.Enum):
    ASYNCHRONOUS = "async"
    SYNCHRONOUS = "sync"


class Scope(enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


class TerminationCause(enum.Enum):
    CONVERGED = "converged"
    CYCLE_DETECTED = "cycle"
    ROUND_CAP = "round_cap"


@dataclass(frozen=True)
class PolicyConfig:
    schedule: Schedule = Schedule.ASYNCHRONOUS
    scope: Scope = Scope.GLOBAL
    penalty_kind: PenaltyKind = PenaltyKind.QUADRATIC
    max_rounds: int = 100
    br_grid: int = 331
    # "fixed" = ascending vehicle id; "random" = seeded permutation per round
    order: str = "fixed"
    order_seed: int = 0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ContractError("max_rounds must be >= 1")
        if self.br_grid < 2:
            raise ContractError("br_grid must be >= 2")
        if self.order not in {"fixed", "random"}:
            raise ContractError(f"unknown update order {self.order!r}")

    @property
    def name(self) -> str:
        return f"{self.scope.value}-{self.schedule.value}"


@dataclass(frozen=True)
class ChargingProfile:
    vehicle_ids: tuple[int, ...]
    p_kw: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return {v: float(p) for v, p in zip(self.vehicle_ids, self.p_kw)}


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    updater: object  # vehicle id, "ALL" for a synchronous round, "INIT"
    profile: np.ndarray
    potential: float
    v_pred: np.ndarray

    @property
    def min_v_pred(self) -> float:
        return float(self.v_pred.min()) if self.v_pred.size else float("nan")


@dataclass
class IterationTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    rounds: int = 0

    def __len__(self):
        return len(self.entries)

    @property
    def potentials(self) -> np.ndarray:
        return np.array([e.potential for e in self.entries])

    @property
    def updates(self) -> int:
        return len(self.entries) - 1


def quantize(profile) -> tuple[int, ...]:
    return tuple(int(x) for x in np.rint(np.asarray(profile, dtype=float) / QUANTUM_KW))


def detect_cycle(trace) -> int | None:
    """Earliest index whose profile equals the latest one (1e-9 kW quantum).

    Accepts an :class:`IterationTrace` or a plain sequence of profiles.
    """
    profiles = [e.profile for e in trace.entries] if isinstance(trace, IterationTrace) else list(trace)
    if not profiles:
        raise ContractError("empty trace")
    last = quantize(profiles[-1])
    for k, prof in enumerate(profiles[:-1]):
        if quantize(prof) == last:
            return k
    return None


class _Slot:
    """Array view of one slot's game shared by all update schedules."""

    def __init__(self, vehicles: Sequence[Vehicle], bounds: Sequence[PowerBounds], ctx: ObjectiveContext,
                 policy: PolicyConfig):
        if len(vehicles) != len(bounds):
            raise ContractError("one PowerBounds per vehicle required")
        if tuple(v.node for v in vehicles) != ctx.control_nodes:
            raise ContractError("vehicles must be ordered like the context's control nodes")
        for v, b in zip(vehicles, bounds):
            if b.p_lo > b.p_hi:
                raise InfeasibilityError(f"vehicle {v.id}: empty power interval", v.id)
        self.vehicles = list(vehicles)
        self.ctx = ctx
        self.policy = policy
        self.p_lo = np.array([b.p_lo for b in bounds], dtype=float)
        self.p_hi = np.array([b.p_hi for b in bounds], dtype=float)
        if policy.scope is Scope.LOCAL:
            self.masks = [ctx.neighborhood_mask(v.node) for v in vehicles]
        else:
            self.masks = [None] * len(vehicles)

    def predicted(self, p):
        return self.ctx.predicted(p - self.ctx.p_reference)

    def potential(self, v_pred) -> float:
        return float(np.sum(penalty(v_pred, self.ctx.band, self.ctx.kind)))

    def _own(self, k, v_pred, p_cur):
        col = self.ctx.s_kw[:, k]
        mask = self.masks[k]
        if mask is not None:
            col = col[mask]
            v_pred = v_pred[mask]
        base = v_pred - col * p_cur
        return np.ascontiguousarray(base), np.ascontiguousarray(col)

    def objective(self, base, slope, p) -> float:
        return float(np.sum(penalty(base + slope * p, self.ctx.band, self.ctx.kind)))

    def respond(self, k, v_pred, p_cur):
        """Best response of vehicle ``k`` and whether it should be applied."""
        base, slope = self._own(k, v_pred, p_cur)
        band = self.ctx.band
        lo, hi = float(self.p_lo[k]), float(self.p_hi[k])
        if self.ctx.kind is PenaltyKind.QUADRATIC:
            p_new = float(kernels.quadratic_best_response(base, slope, band.v_lo, band.v_hi, lo, hi))
        else:
            p_new = float(kernels.crenel_best_response(base, slope, band.v_lo, band.v_hi, lo, hi,
                                                       self.policy.br_grid))
        p_new = min(max(p_new, lo), hi)
        f_new = self.objective(base, slope, p_new)
        f_cur = self.objective(base, slope, p_cur)
        accept = f_new < f_cur - IMPROVEMENT_TOL or (f_new <= f_cur and p_new > p_cur + QUANTUM_KW)
        return p_new, accept


def best_response(vehicle: Vehicle, current_profile: ChargingProfile, bounds: PowerBounds,
                  ctx: ObjectiveContext, scope: Scope = Scope.GLOBAL, br_grid: int = 331) -> float:
    """Power in ``bounds`` minimising the vehicle's objective, others fixed.

    Quadratic penalties are minimised exactly over the breakpoints of the
    piecewise quadratic; crenel penalties by grid search. Ties go to the
    largest power.
    """
    if bounds.p_lo > bounds.p_hi:
        raise InfeasibilityError(f"vehicle {vehicle.id}: empty power interval", vehicle.id)
    try:
        k = ctx.control_nodes.index(vehicle.node)
    except ValueError:
        raise ContractError(f"vehicle {vehicle.id} node {vehicle.node} is not a control node") from None
    j = current_profile.vehicle_ids.index(vehicle.id)
    p = np.asarray(current_profile.p_kw, dtype=float)
    col = ctx.s_kw[:, k]
    v_pred = ctx.predicted(p - ctx.p_reference)
    if scope is Scope.LOCAL:
        mask = ctx.neighborhood_mask(vehicle.node)
        col, v_pred = col[mask], v_pred[mask]
    base = np.ascontiguousarray(v_pred - col * p[j])
    slope = np.ascontiguousarray(col)
    if ctx.kind is PenaltyKind.QUADRATIC:
        out = kernels.quadratic_best_response(base, slope, ctx.band.v_lo, ctx.band.v_hi, bounds.p_lo, bounds.p_hi)
    else:
        out = kernels.crenel_best_response(base, slope, ctx.band.v_lo, ctx.band.v_hi, bounds.p_lo,
                                           bounds.p_hi, br_grid)
    return min(max(float(out), bounds.p_lo), bounds.p_hi)


def _best_in_cycle(trace: IterationTrace, start: int) -> np.ndarray:
    seg = trace.entries[start:]
    best = min(range(len(seg)), key=lambda k: (seg[k].potential, k))
    return seg[best].profile.copy()


def run_slot_brd(vehicles: Sequence[Vehicle], bounds: Sequence[PowerBounds], ctx: ObjectiveContext,
                 policy: PolicyConfig = PolicyConfig()):
    """Run best-response dynamics for one slot.

    ``vehicles`` must be ordered like ``ctx.control_nodes``. Returns
    ``(ChargingProfile, IterationTrace, TerminationCause)``.
    """
    game = _Slot(vehicles, bounds, ctx, policy)
    ids = tuple(v.id for v in vehicles)
    n = len(vehicles)
    p = game.p_hi.copy()
    v_pred = game.predicted(p)
    trace = IterationTrace([TraceEntry(0, "INIT", p.copy(), game.potential(v_pred), v_pred)])
    if n == 0:
        return ChargingProfile(ids, p), trace, TerminationCause.CONVERGED
    seen = {quantize(p): 0}
    rng = np.random.default_rng(policy.order_seed)

    def record(updater):
        key = quantize(p)
        trace.entries.append(TraceEntry(len(trace.entries), updater, p.copy(), game.potential(v_pred), v_pred))
        first = seen.get(key)
        if first is not None:
            return first
        seen[key] = len(trace.entries) - 1
        return None

    for _ in range(policy.max_rounds):
        trace.rounds += 1
        moved = False
        if policy.schedule is Schedule.ASYNCHRONOUS:
            order = range(n) if policy.order == "fixed" else rng.permutation(n)
            for k in order:
                p_new, accept = game.respond(k, v_pred, p[k])
                if not accept:
                    continue
                p[k] = p_new
                v_pred = game.predicted(p)
                moved = True
                start = record(ids[k])
                if start is not None:
                    return (ChargingProfile(ids, _best_in_cycle(trace, start)), trace,
                            TerminationCause.CYCLE_DETECTED)
        else:
            proposal = p.copy()
            for k in range(n):
                p_new, accept = game.respond(k, v_pred, p[k])
                if accept:
                    proposal[k] = p_new
                    moved = True
            if moved:
                p = proposal
                v_pred = game.predicted(p)
                start = record("ALL")
                if start is not None:
                    return (ChargingProfile(ids, _best_in_cycle(trace, start)), trace,
                            TerminationCause.CYCLE_DETECTED)
        if not moved:
            return ChargingProfile(ids, p.copy()), trace, TerminationCause.CONVERGED
    return ChargingProfile(ids, p.copy()), trace, TerminationCause.ROUND_CAP


def is_fixed_point(vehicles, bounds, ctx, policy, profile: ChargingProfile) -> bool:
    """True when no vehicle would apply an update from ``profile``."""
    game = _Slot(vehicles, bounds, ctx, policy)
    p = np.asarray(profile.p_kw, dtype=float)
    v_pred = game.predicted(p)
    return not any(game.respond(k, v_pred, p[k])[1] for k in range(len(vehicles)))
