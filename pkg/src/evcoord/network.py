"""Feeder model, admittance assembly, Newton-Raphson load flow and the
voltage/active-power sensitivity matrix.

All internal quantities are per-unit on ``(base_voltage, base_power)``. Public
entry points that take powers accept kW / kVAr and convert.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, ModelError, NumericalError

LOAD_FLOW_TOL = 1e-8
LOAD_FLOW_MAX_ITER = 50


@dataclass(frozen=True)
class Bus:
    id: int
    base_load_p: float = 0.0
    base_load_q: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float

    @property
    def r_over_x(self) -> float:
        return self.resistance / self.reactance


@dataclass(frozen=True, eq=False)
class FeederModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    base_voltage: float
    base_power: float
    admittance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.base_voltage <= 0 or self.base_power <= 0:
            raise ModelError("per-unit bases must be positive")
        slack = [b.id for b in self.buses if b.is_slack]
        if len(slack) != 1:
            raise ModelError(f"exactly one slack bus required, found {len(slack)}")
        for b in self.buses:
            if not b.is_slack and (b.base_load_p < 0 or b.base_load_q < 0):
                raise ModelError(f"bus {b.id}: base load must be non-negative")
        object.__setattr__(self, "admittance", assemble_admittance(self.buses, self.lines, self.z_base))
        object.__setattr__(self, "_index", {b.id: k for k, b in enumerate(self.buses)})

    def __eq__(self, other):
        if not isinstance(other, FeederModel):
            return NotImplemented
        return (self.buses, self.lines, self.base_voltage, self.base_power) == (
            other.buses, other.lines, other.base_voltage, other.base_power)

    def __hash__(self):
        return hash((self.buses, self.lines, self.base_voltage, self.base_power))

    @property
    def z_base(self) -> float:
        return self.base_voltage**2 / self.base_power

    @property
    def kw_base(self) -> float:
        return self.base_power / 1000.0

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def slack_id(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    @property
    def non_slack_ids(self) -> list[int]:
        return [b.id for b in self.buses if not b.is_slack]

    def index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise ModelError(f"unknown bus id {bus_id}") from None

    def r_over_x(self) -> np.ndarray:
        return np.array([ln.r_over_x for ln in self.lines])

    def base_injections(self) -> tuple[np.ndarray, np.ndarray]:
        """Household demand as (negative) injections in kW / kVAr."""
        p = np.array([-b.base_load_p for b in self.buses])
        q = np.array([-b.base_load_q for b in self.buses])
        return p, q

    def children(self) -> dict[int, list[int]]:
        """Downstream adjacency rooted at the slack bus."""
        adj: dict[int, list[int]] = {b: [] for b in self.bus_ids}
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        out: dict[int, list[int]] = {b: [] for b in self.bus_ids}
        seen = {self.slack_id}
        stack = [self.slack_id]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    out[u].append(w)
                    stack.append(w)
        return out

    def root_paths(self) -> dict[int, list[int]]:
        """Bus id -> list of bus ids from the slack down to it."""
        ch = self.children()
        paths = {self.slack_id: [self.slack_id]}
        stack = [self.slack_id]
        while stack:
            u = stack.pop()
            for w in ch[u]:
                paths[w] = paths[u] + [w]
                stack.append(w)
        return paths

    def scaled(self, factor: float) -> "FeederModel":
        """Copy with every line impedance multiplied by ``factor``."""
        lines = [Line(ln.from_bus, ln.to_bus, ln.resistance * factor, ln.reactance * factor)
                 for ln in self.lines]
        return FeederModel(self.buses, lines, self.base_voltage, self.base_power)

    def with_base_load(self, p_kw: float, q_kvar: float) -> "FeederModel":
        buses = [Bus(b.id, 0.0 if b.is_slack else p_kw, 0.0 if b.is_slack else q_kvar, b.is_slack)
                 for b in self.buses]
        return FeederModel(buses, self.lines, self.base_voltage, self.base_power)


@dataclass(frozen=True)
class LoadFlowSolution:
    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    v_ang: np.ndarray
    iterations: int
    max_residual: float

    def voltage(self, bus_id: int) -> float:
        return float(self.v_mag[self.bus_ids.index(bus_id)])


@dataclass(frozen=True)
class Jacobian:
    """Load-flow Jacobian at an operating point, slack excluded.

    Row order is ``[P(non-slack); Q(non-slack)]`` and column order
    ``[angle(non-slack); magnitude(non-slack)]``.
    """

    matrix: np.ndarray
    bus_ids: tuple[int, ...]
    operating_point: LoadFlowSolution

    @property
    def m(self) -> int:
        return len(self.bus_ids)

    @property
    def dp_dang(self):
        return self.matrix[: self.m, : self.m]

    @property
    def dp_dmag(self):
        return self.matrix[: self.m, self.m:]

    @property
    def dq_dang(self):
        return self.matrix[self.m:, : self.m]

    @property
    def dq_dmag(self):
        return self.matrix[self.m:, self.m:]


@dataclass(frozen=True)
class SensitivityMatrix:
    pilot_nodes: tuple[int, ...]
    control_nodes: tuple[int, ...]
    s_vp_pc: np.ndarray
    operating_point: LoadFlowSolution
    # reactive coupling is kept for completeness only and never used for control
    _s_vp_qc: np.ndarray = field(repr=False, default=None)

    def predict(self, delta_p_pu: np.ndarray) -> np.ndarray:
        return self.s_vp_pc @ np.asarray(delta_p_pu, dtype=float)


def assemble_admittance(buses: Sequence[Bus], lines: Sequence[Line], z_base: float = 1.0) -> np.ndarray:
    """Bus admittance matrix in per-unit; line impedances are divided by ``z_base``."""
    ids = [b.id for b in buses]
    pos = {bid: k for k, bid in enumerate(ids)}
    if len(pos) != len(ids):
        raise ModelError("duplicate bus id")
    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    seen = set()
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in lines:
        if ln.from_bus not in pos or ln.to_bus not in pos:
            raise ModelError(f"line {ln.from_bus}-{ln.to_bus} references an unknown bus")
        if ln.resistance <= 0 or ln.reactance <= 0:
            raise ModelError(f"line {ln.from_bus}-{ln.to_bus}: resistance and reactance must be positive")
        i, j = pos[ln.from_bus], pos[ln.to_bus]
        key = (min(i, j), max(i, j))
        if i == j or key in seen:
            raise ModelError(f"duplicate or self line between {ln.from_bus} and {ln.to_bus}")
        seen.add(key)
        parent[find(i)] = find(j)
        ys = 1.0 / (complex(ln.resistance, ln.reactance) / z_base)
        y[i, j] -= ys
        y[j, i] -= ys
        y[i, i] += ys
        y[j, j] += ys
    if len({find(k) for k in range(n)}) != 1:
        raise ModelError("feeder graph is disconnected")
    if len(lines) != n - 1:
        raise ModelError(f"radial feeder needs {n - 1} lines for {n} buses, got {len(lines)}")
    return y


def _pq_index(model: FeederModel) -> np.ndarray:
    return np.array([k for k, b in enumerate(model.buses) if not b.is_slack], dtype=np.int64)


def solve_load_flow(model: FeederModel, injections_p, injections_q, *, tol: float = LOAD_FLOW_TOL,
                    max_iter: int = LOAD_FLOW_MAX_ITER, warm_start: LoadFlowSolution | None = None
                    ) -> LoadFlowSolution:
    """Newton-Raphson load flow.

    ``injections_p`` / ``injections_q`` are per-bus kW / kVAr in bus order, loads
    negative. The slack bus entries are ignored. ``iterations`` counts mismatch
    evaluations, so an already-balanced start reports 1.
    """
    n = model.n_buses
    p_spec = np.asarray(injections_p, dtype=float) / model.kw_base
    q_spec = np.asarray(injections_q, dtype=float) / model.kw_base
    if p_spec.shape != (n,) or q_spec.shape != (n,):
        raise ModelError(f"injection vectors must have length {n}")
    g = np.ascontiguousarray(model.admittance.real)
    b = np.ascontiguousarray(model.admittance.imag)
    pq = _pq_index(model)
    m = len(pq)
    if warm_start is not None:
        vm = warm_start.v_mag.copy()
        va = warm_start.v_ang.copy()
        slack = model.index(model.slack_id)
        vm[slack], va[slack] = 1.0, 0.0
    else:
        vm = np.ones(n)
        va = np.zeros(n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        p_calc, q_calc = kernels.injections(g, b, vm, va)
        mis = np.concatenate((p_spec[pq] - p_calc[pq], q_spec[pq] - q_calc[pq]))
        residual = float(np.max(np.abs(mis))) if m else 0.0
        if not np.isfinite(residual):
            break
        if residual <= tol:
            return LoadFlowSolution(tuple(model.bus_ids), vm, va, it, residual)
        jac = kernels.polar_jacobian(g, b, vm, va, pq)
        try:
            dx = np.linalg.solve(jac, mis)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular load-flow Jacobian at iteration {it}") from exc
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
    raise DivergenceError(
        f"load flow did not converge in {max_iter} iterations (last residual {residual:.3e} pu)",
        last_residual=residual, iterations=max_iter)


def compute_jacobian(model: FeederModel, solution: LoadFlowSolution) -> Jacobian:
    pq = _pq_index(model)
    jac = kernels.polar_jacobian(np.ascontiguousarray(model.admittance.real),
                                 np.ascontiguousarray(model.admittance.imag),
                                 solution.v_mag, solution.v_ang, pq)
    if not np.all(np.isfinite(jac)):
        raise NumericalError("non-finite Jacobian entries")
    return Jacobian(jac, tuple(model.non_slack_ids), solution)


def extract_sensitivity(jacobian: Jacobian, pilot_nodes: Sequence[int], control_nodes: Sequence[int]
                        ) -> SensitivityMatrix:
    """dV/dP block of the inverse Jacobian (reactive injections held fixed).

    Entries are pu voltage per pu *injection*; a load increase is a negative
    injection and therefore lowers voltage.
    """
    pos = {bid: k for k, bid in enumerate(jacobian.bus_ids)}
    for node in list(pilot_nodes) + list(control_nodes):
        if node not in pos:
            raise ModelError(f"bus {node} is not a non-slack bus of this Jacobian")
    m = jacobian.m
    try:
        inv = np.linalg.inv(jacobian.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular Jacobian, sensitivity undefined") from exc
    rows = [m + pos[p] for p in pilot_nodes]
    cols_p = [pos[c] for c in control_nodes]
    cols_q = [m + pos[c] for c in control_nodes]
    return SensitivityMatrix(tuple(pilot_nodes), tuple(control_nodes),
                             inv[np.ix_(rows, cols_p)], jacobian.operating_point,
                             inv[np.ix_(rows, cols_q)])


def power_mismatch(model: FeederModel, solution: LoadFlowSolution, injections_p, injections_q) -> np.ndarray:
    """Per-bus |specified - computed| active and reactive mismatch (pu), non-slack buses."""
    p_calc, q_calc = kernels.injections(np.ascontiguousarray(model.admittance.real),
                                        np.ascontiguousarray(model.admittance.imag),
                                        solution.v_mag, solution.v_ang)
    pq = _pq_index(model)
    dp = np.asarray(injections_p, float)[pq] / model.kw_base - p_calc[pq]
    dq = np.asarray(injections_q, float)[pq] / model.kw_base - q_calc[pq]
    return np.concatenate((np.abs(dp), np.abs(dq)))


# ---------------------------------------------------------------------------
# feeder file format
# ---------------------------------------------------------------------------

_SECTIONS = {
    "base": ["v_volts", "s_va"],
    "buses": ["id", "base_load_p_kw", "base_load_q_kvar", "is_slack"],
    "lines": ["from", "to", "r_ohm", "x_ohm"],
}


def _parse_bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in {"1", "true"}:
        return True
    if t in {"0", "false"}:
        return False
    raise ConfigError(f"{where}: expected 0/1/true/false, got {text!r}")


def parse_feeder(text: str, source: str = "<feeder>") -> FeederModel:
    rows: dict[str, list[tuple[int, list[str]]]] = {k: [] for k in _SECTIONS}
    section = None
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            header_seen = False
            continue
        if section is None:
            raise ConfigError(f"{where}: data before any section header")
        cells = [c.strip() for c in line.split(",")]
        if not header_seen:
            if cells != _SECTIONS[section]:
                raise ConfigError(f"{where}: expected header {','.join(_SECTIONS[section])}")
            header_seen = True
            continue
        if len(cells) != len(_SECTIONS[section]):
            raise ConfigError(f"{where}: expected {len(_SECTIONS[section])} fields, got {len(cells)}")
        rows[section].append((lineno, cells))
    if len(rows["base"]) != 1:
        raise ConfigError(f"{source}: [base] section must contain exactly one row")
    try:
        lineno, (v, s) = rows["base"][0]
        base_v, base_s = float(v), float(s)
        buses = []
        for lineno, c in rows["buses"]:
            buses.append(Bus(int(c[0]), float(c[1]), float(c[2]), _parse_bool(c[3], f"{source}:{lineno}")))
        lines = []
        for lineno, c in rows["lines"]:
            lines.append(Line(int(c[0]), int(c[1]), float(c[2]), float(c[3])))
    except ValueError as exc:
        raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return FeederModel(buses, lines, base_v, base_s)


def serialize_feeder(model: FeederModel) -> str:
    out = io.StringIO()
    out.write("[base]\nv_volts,s_va\n")
    out.write(f"{model.base_voltage!r},{model.base_power!r}\n")
    out.write("[buses]\nid,base_load_p_kw,base_load_q_kvar,is_slack\n")
    for b in model.buses:
        out.write(f"{b.id},{b.base_load_p!r},{b.base_load_q!r},{int(b.is_slack)}\n")
    out.write("[lines]\nfrom,to,r_ohm,x_ohm\n")
    for ln in model.lines:
        out.write(f"{ln.from_bus},{ln.to_bus},{ln.resistance!r},{ln.reactance!r}\n")
    return out.getvalue()


def read_feeder(path) -> FeederModel:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"feeder file not found: {path}")
    return parse_feeder(path.read_text(), str(path))


def write_feeder(model: FeederModel, path) -> None:
    Path(path).write_text(serialize_feeder(model))


# ---------------------------------------------------------------------------
# bundled surrogate
# ---------------------------------------------------------------------------

# IEEE 34-node topology relabelled 1..34 (800 -> 1, ..., 838 -> 34). Nodes
# 1-14 are the upstream part of the feeder, 15-34 the downstream part.
SURROGATE_EDGES = (
    (1, 2), (2, 3), (3, 4), (4, 5), (4, 6), (6, 7), (7, 8), (8, 9), (9, 10),
    (10, 11), (11, 12), (9, 13), (13, 14), (13, 15), (15, 16), (16, 17),
    (17, 18), (17, 19), (19, 20), (20, 21), (21, 22), (20, 23), (23, 24),
    (23, 25), (25, 26), (26, 27), (27, 28), (28, 29), (25, 30), (30, 31),
    (31, 32), (31, 33), (33, 34),
)
SURROGATE_DEEPEST = 34
BUNDLED_FEEDER = Path(__file__).with_name("data") / "ieee34_lv.csv"


def surrogate_template(r_ohm: float = 0.01, x_ohm: float = 0.01, base_p_kw: float = 0.5,
                       base_q_kvar: float = 0.1, base_voltage: float = 400.0,
                       base_power: float = 100e3) -> FeederModel:
    """Uncalibrated 34-bus surrogate with uniform per-section impedance."""
    buses = [Bus(1, 0.0, 0.0, True)] + [Bus(k, base_p_kw, base_q_kvar) for k in range(2, 35)]
    lines = [Line(a, b, r_ohm, x_ohm) for a, b in SURROGATE_EDGES]
    return FeederModel(buses, lines, base_voltage, base_power)


def load_bundled_feeder() -> FeederModel:
    return read_feeder(BUNDLED_FEEDER)
