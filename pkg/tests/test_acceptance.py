"""Acceptance suite: one reported PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary table is printed
at the end of the session.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from evcoord import cli, coordination as co, network as nw
from evcoord.baselines import DroopCurve, droop_power
from evcoord.config import load_config, DEFAULT_CONFIG
from evcoord.fleet import PowerBounds, Vehicle
from evcoord.metrics import ObjectiveContext
from evcoord.scenario import MC_POLICIES, run_monte_carlo, run_scenario

from _builders import radial_feeder, random_context, slot_instance, two_bus
from test_coordination import grid_oracle, own_cost
from test_network import closed_form_v2, fd_jacobian


@pytest.fixture(scope="module")
def feeder():
    return nw.load_bundled_feeder()


@pytest.fixture(scope="module")
def mc_run():
    cfg = load_config(DEFAULT_CONFIG).scenario
    t0 = time.perf_counter()
    report = run_monte_carlo(cfg, 10, [10, 20, 30], MC_POLICIES)
    return report, time.perf_counter() - t0


@pytest.mark.criterion("[01] load-flow correctness")
def test_load_flow_correctness(criterion):
    rng = np.random.default_rng(101)
    cases = [two_bus(0.08, 0.04, 30.0, 6.0)] + [radial_feeder(rng, int(rng.integers(2, 35))) for _ in range(20)]
    nw.solve_load_flow(cases[0], *cases[0].base_injections())  # JIT warm-up, not part of the timing
    t0 = time.perf_counter()
    sols = [nw.solve_load_flow(f, *f.base_injections()) for f in cases]
    elapsed = time.perf_counter() - t0
    residual = max(nw.power_mismatch(f, s, *f.base_injections()).max() for f, s in zip(cases, sols))
    f = cases[0]
    v2 = closed_form_v2(0.08 / f.z_base, 0.04 / f.z_base, 30.0 / f.kw_base, 6.0 / f.kw_base)
    closed_err = abs(sols[0].voltage(2) - v2)
    criterion.check(residual <= 1e-8 and closed_err <= 1e-8 and elapsed < 1.0,
                    f"max residual {residual:.2e} pu, 2-bus error {closed_err:.2e}, {elapsed:.3f} s")


@pytest.mark.criterion("[02] sensitivity fidelity")
def test_sensitivity_fidelity(criterion, feeder):
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in range(100):
        if k % 2:
            f = radial_feeder(rng, int(rng.integers(3, 35)))
            p, q = f.base_injections()
        else:
            f = feeder
            p, q = f.base_injections()
            ev_nodes = rng.choice(f.non_slack_ids, int(rng.integers(0, 30)), replace=False)
            for n in ev_nodes:
                p[f.index(int(n))] -= rng.uniform(0, 3.3)
        sol = nw.solve_load_flow(f, p, q)
        node = int(rng.choice(f.non_slack_ids))
        sens = nw.extract_sensitivity(nw.compute_jacobian(f, sol), f.non_slack_ids, [node])
        dp = 1e-3 * rng.choice([-1.0, 1.0])  # pu
        p2 = p.copy()
        p2[f.index(node)] += dp * f.kw_base
        new = nw.solve_load_flow(f, p2, q, warm_start=sol)
        pq = [f.index(b) for b in f.non_slack_ids]
        dv_true = new.v_mag[pq] - sol.v_mag[pq]
        dv_lin = sens.predict([dp])
        worst = max(worst, np.max(np.abs(dv_lin - dv_true)) / np.max(np.abs(dv_true)))
    criterion.check(worst <= 1e-3, f"worst relative voltage-change error {worst:.2e} (limit 1e-3)")


@pytest.mark.criterion("[03] Jacobian vs finite differences")
def test_jacobian_check(criterion):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(20):
        f = radial_feeder(rng, int(rng.integers(2, 35)))
        vm = rng.uniform(0.9, 1.05, f.n_buses)
        va = rng.uniform(-0.1, 0.0, f.n_buses)
        vm[0], va[0] = 1.0, 0.0
        jac = nw.compute_jacobian(f, nw.LoadFlowSolution(tuple(f.bus_ids), vm, va, 0, 0.0)).matrix
        fd = fd_jacobian(f, vm, va, h=1e-6)
        scale = np.abs(jac).max()
        nz = np.abs(jac) > 1e-9 * scale
        rel = np.max(np.abs(jac - fd)[nz] / np.abs(jac[nz]))
        structural = np.max(np.abs(fd[~nz]), initial=0.0) / scale
        worst = max(worst, rel, structural)
    criterion.check(worst < 1e-5, f"worst entrywise relative error {worst:.2e} (limit 1e-5)")


@pytest.mark.criterion("[04] potential monotonicity and convergence")
def test_potential_monotone(criterion, feeder):
    policy = co.PolicyConfig()
    bad, updates = [], []
    for seed in range(50):
        vehicles, bounds, ctx = slot_instance(feeder, seed)
        prof, trace, cause = co.run_slot_brd(vehicles, bounds, ctx, policy)
        updates.append(trace.updates / len(vehicles))
        ok = (cause is co.TerminationCause.CONVERGED and bool(np.all(np.diff(trace.potentials) < 0))
              and co.is_fixed_point(vehicles, bounds, ctx, policy, prof))
        if not ok:
            bad.append(seed)
    mean_updates = float(np.mean(updates))
    criterion.check(not bad and mean_updates <= 10,
                    f"{50 - len(bad)}/50 instances strictly decreasing, converged and fixed; "
                    f"mean updates per EV {mean_updates:.2f}")


@pytest.mark.criterion("[05] best-response exactness")
def test_best_response_exact(criterion):
    rng = np.random.default_rng(505)
    worst = -np.inf
    for _ in range(100):
        n = int(rng.integers(1, 6))
        ctx = random_context(rng, int(rng.integers(1, 34)), n)
        k = int(rng.integers(0, n))
        vehicle = Vehicle(1, ctx.control_nodes[k], 10.0, 24.0, 24.0, 3.3, 0, 20)
        ids = [0] * n
        ids[k] = 1
        ids = [i if i else 100 + j for j, i in enumerate(ids)]
        p = rng.uniform(0, 3.3, n)
        lo = float(rng.uniform(0, 2.0))
        hi = float(rng.uniform(lo, 3.3))
        vehicle = replace(vehicle, id=ids[k])
        br = co.best_response(vehicle, co.ChargingProfile(tuple(ids), p), PowerBounds(lo, hi), ctx)
        base = ctx.predicted(p) - ctx.s_kw[:, k] * p[k]
        slope = ctx.s_kw[:, k]
        gap = own_cost(base, slope, br, ctx.band) - grid_oracle(base, slope, lo, hi, ctx.band)
        worst = max(worst, gap)
    criterion.check(worst <= 1e-12, f"worst objective gap to 1e5-point grid {worst:.2e} (limit 1e-12)")


@pytest.mark.criterion("[06] synchronous safety")
def test_synchronous_cycle(criterion):
    # two vehicles on one pilot: either alone fits, both together breach the band
    ctx = ObjectiveContext(np.array([0.95]), np.array([[-0.01, -0.01]]), (2,), (3, 4))
    vehicles = [Vehicle(1, 3, 10.0, 24.0, 24.0, 3.3, 0, 20), Vehicle(2, 4, 10.0, 24.0, 24.0, 3.3, 0, 20)]
    policy = co.PolicyConfig(schedule=co.Schedule.SYNCHRONOUS, max_rounds=20)
    _, trace, cause = co.run_slot_brd(vehicles, [PowerBounds(0.0, 3.3)] * 2, ctx, policy)
    criterion.check(cause is co.TerminationCause.CYCLE_DETECTED and trace.rounds <= 20,
                    f"termination {cause.value} after {trace.rounds} rounds")


@pytest.mark.criterion("[07] droop curve exactness")
def test_droop_exact(criterion):
    curve = DroopCurve()
    pts = {0.85: 0.0, 0.90: 0.0, 0.95: 3.3, 1.05: 3.3}
    exact = all(droop_power(v, curve) == p for v, p in pts.items())
    mid = abs(droop_power(0.925, curve) - 1.65)
    criterion.check(exact and mid <= 1e-12, f"breakpoints bit-exact: {exact}, midpoint error {mid:.1e}")


@pytest.mark.criterion("[08] policy ordering")
def test_policy_ordering(criterion, mc_run):
    report, elapsed = mc_run
    sizes = report.fleet_sizes
    m = {(p, n): report.mean(p, n) for p in report.policies for n in sizes}
    ordering = {n: m["uncoordinated", n] < m["droop", n] <= m["global-async", n] for n in sizes}
    falling = all(m["uncoordinated", a] > m["uncoordinated", b] for a, b in zip(sizes, sizes[1:]))
    local_gap = max(abs(m["local-async", n] - m["global-async", n]) for n in sizes)
    table = "; ".join(f"N={n}: unc {m['uncoordinated', n]:.3f} droop {m['droop', n]:.3f} "
                      f"glob {m['global-async', n]:.3f} loc {m['local-async', n]:.3f}" for n in sizes)
    criterion.check(all(ordering.values()) and falling and local_gap <= 0.01 and elapsed < 300,
                    f"ordering holds at {[n for n, ok in ordering.items() if ok]}, "
                    f"uncoordinated falling {falling}, local gap {local_gap:.4f}, {elapsed:.1f} s | {table}")


@pytest.mark.criterion("[09] SoC guarantee")
def test_soc_guarantee(criterion, mc_run):
    report, _ = mc_run
    cfg = load_config(DEFAULT_CONFIG)
    summaries = [s for runs in report.summaries.values() for s in runs]
    summaries += [run_scenario(replace(cfg.scenario, policy=p)).summary for p in cfg.policies]
    violations = sum(len(s.soc_violations()) for s in summaries)
    checked = sum(len(s.final_soc) for s in summaries)
    criterion.check(violations == 0, f"{violations} violations over {checked} vehicle runs")


@pytest.mark.criterion("[10] determinism")
def test_determinism(criterion, tmp_path):
    differing = []
    for command in cli.COMMANDS:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / command / rep
            assert cli.main([command, "--out", str(out), "--seed", "7"]) == 0
            outs.append(out)
        for f in sorted(outs[0].iterdir()):
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                differing.append(f"{command}/{f.name}")
    criterion.check(not differing, f"{len(cli.COMMANDS)} commands re-run; differing files: {differing or 'none'}")
