"""Voltage-band penalties and the charging objectives built on the
sensitivity linearisation.

Sign convention: a positive ``delta_p`` is *more* charging (consumption), so
the per-kW sensitivities held in :class:`ObjectiveContext` are negative on a
passive feeder.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .network import SensitivityMatrix


class PenaltyKind(enum.Enum):
    QUADRATIC = "quadratic"
    CRENEL = "crenel"


@dataclass(frozen=True)
class VoltageBand:
    v_lo: float = 0.9
    v_hi: float = 1.1

    def __post_init__(self):
        if not 0 < self.v_lo < self.v_hi:
            raise ConfigError(f"invalid voltage band [{self.v_lo}, {self.v_hi}]")


def penalty(v, band: VoltageBand = VoltageBand(), kind: PenaltyKind = PenaltyKind.QUADRATIC):
    """Band penalty; scalar in, float out, array in, array out."""
    arr = np.asarray(v, dtype=float)
    if kind is PenaltyKind.CRENEL:
        out = ((arr < band.v_lo) | (arr > band.v_hi)).astype(float)
    else:
        under = np.minimum(arr - band.v_lo, 0.0)
        over = np.maximum(arr - band.v_hi, 0.0)
        out = under * under + over * over
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ObjectiveContext:
    """Everything a vehicle needs to evaluate its objective in one slot.

    ``s_kw[k, c]`` is the voltage change (pu) at ``pilot_nodes[k]`` per kW of
    extra charging at ``control_nodes[c]``; ``p_reference`` is the charging
    profile at the linearisation point, so ``delta_p = p - p_reference``.
    """

    v_measured: np.ndarray
    s_kw: np.ndarray
    pilot_nodes: tuple[int, ...]
    control_nodes: tuple[int, ...]
    v_ref: float = 0.0
    band: VoltageBand = VoltageBand()
    kind: PenaltyKind = PenaltyKind.QUADRATIC
    neighborhood_map: Mapping[int, Sequence[int]] | None = None
    p_reference: np.ndarray | None = None
    _masks: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.v_measured, dtype=float)
        shape = (len(self.pilot_nodes), len(self.control_nodes))
        s = np.asarray(self.s_kw, dtype=float)
        if s.size != shape[0] * shape[1]:
            raise ContractError(f"s_kw must be {shape[0]}x{shape[1]}, got {s.shape}")
        s = s.reshape(shape)
        if v.shape != (len(self.pilot_nodes),):
            raise ContractError("v_measured must be indexed like pilot_nodes")
        object.__setattr__(self, "v_measured", v)
        object.__setattr__(self, "s_kw", s)
        object.__setattr__(self, "pilot_nodes", tuple(self.pilot_nodes))
        object.__setattr__(self, "control_nodes", tuple(self.control_nodes))
        ref = np.zeros(len(self.control_nodes)) if self.p_reference is None else np.asarray(self.p_reference, float)
        object.__setattr__(self, "p_reference", ref)

    @classmethod
    def from_sensitivity(cls, sens: SensitivityMatrix, base_power_va: float, **kwargs) -> "ObjectiveContext":
        bus_pos = {b: k for k, b in enumerate(sens.operating_point.bus_ids)}
        v = np.array([sens.operating_point.v_mag[bus_pos[p]] for p in sens.pilot_nodes])
        # pu/pu-injection -> pu per kW of consumption
        s_kw = -sens.s_vp_pc / (base_power_va / 1000.0)
        return cls(v, s_kw, sens.pilot_nodes, sens.control_nodes, **kwargs)

    def predicted(self, delta_p) -> np.ndarray:
        """Argument of the penalty at every pilot node."""
        delta_p = np.asarray(delta_p, dtype=float)
        if delta_p.shape != (len(self.control_nodes),):
            raise ContractError(f"delta_p must have {len(self.control_nodes)} entries, got {delta_p.shape}")
        return self.v_measured - self.v_ref + self.s_kw @ delta_p

    def neighborhood_mask(self, vehicle_node: int) -> np.ndarray:
        mask = self._masks.get(vehicle_node)
        if mask is None:
            if self.neighborhood_map is None or vehicle_node not in self.neighborhood_map:
                raise ConfigError(f"no neighborhood defined for node {vehicle_node}")
            members = set(self.neighborhood_map[vehicle_node])
            mask = np.array([p in members for p in self.pilot_nodes], dtype=bool)
            self._masks[vehicle_node] = mask
        return mask


def global_objective(delta_p, ctx: ObjectiveContext) -> float:
    return float(np.sum(penalty(ctx.predicted(delta_p), ctx.band, ctx.kind)))


def local_objective(vehicle_node: int, delta_p, ctx: ObjectiveContext) -> float:
    mask = ctx.neighborhood_mask(vehicle_node)
    return float(np.sum(penalty(ctx.predicted(delta_p)[mask], ctx.band, ctx.kind)))


def potential(delta_p, ctx: ObjectiveContext) -> float:
    """Potential of the auxiliary game: the global objective itself."""
    return global_objective(delta_p, ctx)


# ---------------------------------------------------------------------------
# neighborhoods
# ---------------------------------------------------------------------------

def neighborhoods_from_groups(groups: Sequence[Sequence[int]], pilot_nodes: Sequence[int]) -> dict[int, tuple[int, ...]]:
    """Each node of a group sees the pilot nodes of its own group."""
    pilots = set(pilot_nodes)
    out: dict[int, tuple[int, ...]] = {}
    for g in groups:
        seen = tuple(n for n in g if n in pilots)
        for n in g:
            if n in out:
                raise ConfigError(f"node {n} belongs to more than one neighborhood")
            out[n] = seen
    return out


def default_neighborhoods(pilot_nodes: Sequence[int]) -> dict[int, tuple[int, ...]]:
    return neighborhoods_from_groups([range(1, 15), range(15, 35)], pilot_nodes)


def parse_neighborhoods(text: str, source: str = "<neighborhoods>") -> dict[int, tuple[int, ...]]:
    """Two-section table: ``[members] node_id,neighborhood_id`` and
    ``[pilots] neighborhood_id,node_id``."""
    members: dict[int, str] = {}
    pilots: dict[str, list[int]] = {}
    section = None
    header = {"members": ["node_id", "neighborhood_id"], "pilots": ["neighborhood_id", "node_id"]}
    expect_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line.strip("[]").strip()
            if section not in header:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            expect_header = True
            continue
        cells = [c.strip() for c in line.split(",")]
        if section is None:
            raise ConfigError(f"{source}:{lineno}: data before section header")
        if expect_header:
            if cells != header[section]:
                raise ConfigError(f"{source}:{lineno}: expected header {','.join(header[section])}")
            expect_header = False
            continue
        if len(cells) != 2:
            raise ConfigError(f"{source}:{lineno}: expected 2 fields")
        try:
            if section == "members":
                node = int(cells[0])
                if node in members:
                    raise ConfigError(f"{source}:{lineno}: node {node} listed twice")
                members[node] = cells[1]
            else:
                pilots.setdefault(cells[0], []).append(int(cells[1]))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    missing = set(members.values()) - set(pilots)
    if missing:
        raise ConfigError(f"{source}: neighborhoods without pilot list: {sorted(missing)}")
    return {node: tuple(pilots[nid]) for node, nid in members.items()}
