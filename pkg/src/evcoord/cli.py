"""Command-line entry point: ``evcoord {solve,sensitivity,scenario,montecarlo,calibrate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import reporting
from .calibration import calibrate_feeder
from .config import DEFAULT_CONFIG, RunConfig, load_config, load_feeder_ref
from .errors import ConfigError, EvCoordError
from .metrics import PenaltyKind
from .network import compute_jacobian, extract_sensitivity, solve_load_flow
from .scenario import POLICIES, run_monte_carlo, run_scenario

log = logging.getLogger("evcoord")

COMMANDS = ("solve", "sensitivity", "scenario", "montecarlo", "calibrate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: Path
    out: Path
    seed: int | None = None
    verbosity: int = 0
    policy: str | None = None
    metric: str | None = None
    draws: int | None = None
    fleet_sizes: tuple[int, ...] | None = None


def _fleet_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 0:
        raise argparse.ArgumentTypeError("fleet sizes must be non-negative integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evcoord", description="Decentralised EV charging coordination for voltage control.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=DEFAULT_CONFIG, help="YAML run configuration")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name in ("scenario", "montecarlo"):
            p.add_argument("--policy", choices=POLICIES, default=None)
            p.add_argument("--metric", choices=[k.value for k in PenaltyKind], default=None)
        if name == "montecarlo":
            p.add_argument("--draws", type=int, default=None)
            p.add_argument("--fleet-sizes", type=_fleet_sizes, default=None)
    return parser


def _apply_overrides(cfg: RunConfig, m: RunManifest) -> RunConfig:
    sc = cfg.scenario
    if m.seed is not None:
        sc = replace(sc, seed=m.seed)
    if m.metric is not None:
        sc = replace(sc, brd=replace(sc.brd, penalty_kind=PenaltyKind(m.metric)))
    policies = cfg.policies
    if m.policy is not None:
        policies = (m.policy,)
    return replace(cfg, scenario=sc, policies=policies)


def cmd_solve(cfg: RunConfig, m: RunManifest) -> int:
    feeder = cfg.scenario.feeder
    sol = solve_load_flow(feeder, *feeder.base_injections())
    reporting.write_solution(m.out, feeder, sol)
    return 0


def cmd_sensitivity(cfg: RunConfig, m: RunManifest) -> int:
    feeder = cfg.scenario.feeder
    sol = solve_load_flow(feeder, *feeder.base_injections())
    sens = extract_sensitivity(compute_jacobian(feeder, sol), cfg.scenario.pilots, feeder.non_slack_ids)
    reporting.write_sensitivity(m.out, sens)
    return 0


def cmd_scenario(cfg: RunConfig, m: RunManifest) -> int:
    sc = cfg.scenario
    results = {}
    for name in cfg.policies:
        log.info("running %s", name)
        results[name] = run_scenario(replace(sc, policy=name), keep_traces=True)
    spec = sc.fleet_spec
    reporting.write_scenario(m.out, results, _hours(spec.horizon_start), spec.slot_hours, sc.penalty_kind.value)
    return 0


def _hours(clock: str) -> float:
    hh, mm = clock.split(":")
    return int(hh) + int(mm) / 60.0


def cmd_montecarlo(cfg: RunConfig, m: RunManifest) -> int:
    mc = cfg.montecarlo
    draws = m.draws if m.draws is not None else int(mc["draws"])
    sizes = m.fleet_sizes if m.fleet_sizes is not None else tuple(int(x) for x in mc["fleet_sizes"])
    policies = (m.policy,) if m.policy is not None else tuple(mc["policies"])
    if draws < 1:
        raise ConfigError("--draws must be >= 1")
    report = run_monte_carlo(cfg.scenario, draws, sizes, policies, n_jobs=int(mc["jobs"]))
    reporting.write_montecarlo(m.out, report)
    return 0


def cmd_calibrate(cfg: RunConfig, m: RunManifest) -> int:
    c = cfg.calibrate
    base_dir = cfg.source.parent if cfg.source is not None else None
    template = load_feeder_ref("template" if c["template"] == "builtin" else c["template"], base_dir)
    bl = cfg.raw["base_load"]
    if bl["p_kw"] is not None:
        template = template.with_base_load(float(bl["p_kw"]), float(bl["q_kvar"]))
    result = calibrate_feeder(cfg.scenario, template, target_v=float(c["target_v"]),
                              tolerance=float(c["tolerance"]), n_vehicles=int(c["n_vehicles"]),
                              draws=int(c["draws"]), scale_lo=float(c["scale_lo"]), scale_hi=float(c["scale_hi"]))
    reporting.write_calibration(m.out, result, str(c["output"]))
    log.info("scale %.9g reaches %.4f pu", result.scale, result.achieved)
    return 0


HANDLERS = {
    "solve": cmd_solve,
    "sensitivity": cmd_sensitivity,
    "scenario": cmd_scenario,
    "montecarlo": cmd_montecarlo,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    manifest = RunManifest(args.command, args.config, args.out, args.seed, args.verbose,
                           getattr(args, "policy", None), getattr(args, "metric", None),
                           getattr(args, "draws", None), getattr(args, "fleet_sizes", None))
    try:
        cfg = _apply_overrides(load_config(manifest.config), manifest)
        try:
            manifest.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {manifest.out}: {exc}") from None
        return HANDLERS[manifest.command](cfg, manifest)
    except EvCoordError as exc:
        print(f"evcoord: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
