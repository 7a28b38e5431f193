"""Command-line entry point.

Subcommands write CSV to --out, render a matching figure next to it
(unless --no-plot), and print a short summary.  Exit codes: 0 success,
1 validation problem, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import plotting
from .dispatch import (
    brute_force_dispatch,
    build_load_map,
    solve_dispatch,
    to_current_domain,
    write_map_csv,
)
from .errors import NumericalError, ValidationError
from .network import Impedance, Phasor, complex_powers, power_angle_jacobians, solve_network
from .simulator import ECONOMICAL, PROPORTIONAL, SCHEMES, compare_tagc, detect_steady_state, run_scenario
from .smallsignal import PARAM_FILTER_CUTOFF, PARAM_LOAD_RESISTANCE, root_locus

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _resolve_config(spec: str) -> Path:
    p = Path(spec)
    if p.is_file():
        return p
    return config_mod.bundled_path(spec)


def _load_config(args):
    cfg, embedded = config_mod.parse_config(_resolve_config(args.config))
    return cfg, embedded


def _load_schedule(args, cfg, embedded):
    if getattr(args, "schedule", None):
        p = Path(args.schedule)
        if not p.is_file():
            p = config_mod.bundled_path(args.schedule)
        return config_mod.parse_schedule_file(p, cfg)
    if embedded is not None:
        return embedded
    raise ValidationError("no schedule: pass --schedule or embed one in the config")


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


def _write_dispatch_csv(path, result):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dg,power_w,marginal_cost,at_bound\n")
        for i, p in enumerate(result.powers):
            fh.write(
                f"{i + 1},{p:.12e},{result.incremental_cost:.12e},"
                f"{int(i in result.active_bounds)}\n"
            )


def _cmd_dispatch(args) -> int:
    cfg, _ = _load_config(args)
    if args.map:
        lo = args.from_value if args.from_value is not None else 0.0
        hi = args.to_value if args.to_value is not None else float(sum(cfg.ratings))
        load_map = build_load_map(cfg.costs, (lo, hi), enforce_bounds=args.bounds)
        out_map = load_map
        if args.domain == "current":
            out_map = to_current_domain(load_map, cfg.v_pcc_ref)
            lo, hi = out_map.domain
        if not args.out:
            raise ValidationError("--map needs --out for the CSV")
        write_map_csv(out_map, args.out, lo=lo, hi=hi, samples=args.samples)
        print(f"sharing map ({out_map.form}) over [{lo:g}, {hi:g}] -> {args.out}")
        return EXIT_OK
    if args.load is None:
        raise ValidationError("dispatch needs --load (or --map)")
    result = solve_dispatch(cfg.costs, args.load, enforce_bounds=args.bounds)
    print(f"load: {args.load:.4f} W   incremental cost: {result.incremental_cost:.6f}")
    for i, p in enumerate(result.powers):
        tag = "  [at bound]" if i in result.active_bounds else ""
        print(f"  DG {i + 1}: {p:.4f} W{tag}")
    print(f"total cost: {result.total_cost:.6f}")
    if args.out:
        _write_dispatch_csv(args.out, result)
        print(f"wrote {args.out}")
    return EXIT_OK


def _print_settle(report, label):
    print(f"settling ({label}):")
    for seg in report.segments:
        if seg.reached:
            print(f"  segment {seg.start:g}-{seg.end:g} s: steady at {seg.t_settle:.3f} s")
        else:
            print(f"  segment {seg.start:g}-{seg.end:g} s: no steady state detected")


def _cmd_simulate(args) -> int:
    cfg, embedded = _load_config(args)
    schedule = _load_schedule(args, cfg, embedded)
    traj = run_scenario(cfg, schedule, args.scheme, args.t_end, dt=args.dt)
    traj.write_csv(args.out)
    print(f"{len(traj.t)} samples -> {args.out}")
    window = max(10.0 * 2.0 * np.pi / cfg.w_c, 0.1)
    report = detect_steady_state(traj, window)
    _print_settle(report, args.scheme)
    if np.any(traj.saturated):
        print("warning: frequency command saturated during the run")
    if not args.no_plot:
        print(f"figure -> {plotting.plot_trajectory(traj, _figure_path(args.out))}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg, embedded = _load_config(args)
    schedule = _load_schedule(args, cfg, embedded)
    out = Path(args.out)
    traj_e = run_scenario(cfg, schedule, ECONOMICAL, args.t_end, dt=args.dt)
    traj_p = run_scenario(cfg, schedule, PROPORTIONAL, args.t_end, dt=args.dt)
    path_e = out.with_name(out.stem + "_economical.csv")
    path_p = out.with_name(out.stem + "_proportional.csv")
    traj_e.write_csv(path_e)
    traj_p.write_csv(path_p)
    print(f"trajectories -> {path_e}, {path_p}")
    report = compare_tagc(traj_e, traj_p)
    print("steady-state generation cost per segment:")
    for seg in report.segments:
        if seg.reached:
            print(
                f"  {seg.start:g}-{seg.end:g} s: economical {seg.tagc_a:.4f}  "
                f"proportional {seg.tagc_b:.4f}  diff {seg.difference:+.4f}"
            )
        else:
            print(f"  {seg.start:g}-{seg.end:g} s: not settled, skipped")
    verdict = "yes" if report.a_le_b_everywhere else "no"
    print(f"economical never costlier at steady state: {verdict}")
    print(
        f"integrated cost: economical {report.integral_a:.4f}  "
        f"proportional {report.integral_b:.4f}"
    )
    if not args.no_plot:
        fig = plotting.plot_compare(traj_e, traj_p, out.with_suffix(".png"))
        print(f"figure -> {fig}")
    return EXIT_OK


def _cmd_rootlocus(args) -> int:
    cfg, _ = _load_config(args)
    locus = root_locus(
        cfg,
        args.param,
        args.from_value,
        args.to_value,
        args.steps,
        load_resistance=args.load_resistance,
    )
    locus.write_csv(args.out)
    counts = {}
    for v in locus.verdicts:
        counts[v] = counts.get(v, 0) + 1
    summary = ", ".join(f"{k}: {v}" for k, v in sorted(counts.items()))
    print(f"{args.steps} sweep points ({summary}) -> {args.out}")
    for val, msg in locus.failures:
        print(f"  failed at {args.param} = {val:g}: {msg}")
    if not args.no_plot:
        print(f"figure -> {plotting.plot_root_locus(locus, _figure_path(args.out))}")
    return EXIT_OK if not locus.failures else EXIT_NUMERICAL


def _selftest_dispatch(rng) -> str:
    for _ in range(5):
        n = int(rng.integers(2, 4))
        costs = []
        for _ in range(n):
            from .dispatch import CostFunction

            lo = float(rng.uniform(0.0, 20.0))
            costs.append(
                CostFunction(
                    a=float(rng.uniform(0.05, 0.5)),
                    b=float(rng.uniform(0.0, 0.2)),
                    p_min=lo,
                    p_max=lo + float(rng.uniform(20.0, 60.0)),
                )
            )
        agg_lo = sum(cf.p_min for cf in costs)
        agg_hi = sum(cf.p_max for cf in costs)
        load = float(rng.uniform(agg_lo, agg_hi))
        fast = solve_dispatch(costs, load, enforce_bounds=True)
        slow = brute_force_dispatch(costs, load, 0.05)
        bound = sum(
            abs(cf.marginal(p)) * 0.05 + cf.a * 0.05**2
            for cf, p in zip(costs, fast.powers)
        )
        if not fast.total_cost <= slow.total_cost + 1e-9:
            return f"solver beat by brute force: {fast.total_cost} > {slow.total_cost}"
        if slow.total_cost - fast.total_cost > bound:
            return "brute force disagrees beyond the grid-step bound"
    return ""


def _selftest_jacobians(rng) -> str:
    step = 1e-7
    for _ in range(5):
        n = int(rng.integers(2, 5))
        v = rng.uniform(20.0, 60.0, n)
        d = rng.uniform(-0.3, 0.3, n)
        z_load = Impedance(float(rng.uniform(5.0, 20.0)), float(rng.uniform(0.0, 2.0)))
        lines = tuple(Impedance(0.0, float(rng.uniform(0.1, 1.0))) for _ in range(n))
        phasors = [Phasor(float(m), float(a)) for m, a in zip(v, d)]
        t_p, t_q = power_angle_jacobians(phasors, z_load, lines)
        for j in range(n):
            dp = d.copy()
            dm = d.copy()
            dp[j] += step
            dm[j] -= step
            sp = solve_network([Phasor(float(m), float(a)) for m, a in zip(v, dp)], z_load, lines)
            sm = solve_network([Phasor(float(m), float(a)) for m, a in zip(v, dm)], z_load, lines)
            fd_p = (sp.p - sm.p) / (2 * step)
            fd_q = (sp.q - sm.q) / (2 * step)
            scale = max(1.0, float(np.abs(t_p).max()), float(np.abs(t_q).max()))
            if np.max(np.abs(fd_p - t_p[:, j])) > 1e-5 * scale:
                return f"P Jacobian column {j} off by more than 1e-5 relative"
            if np.max(np.abs(fd_q - t_q[:, j])) > 1e-5 * scale:
                return f"Q Jacobian column {j} off by more than 1e-5 relative"
    return ""


def _selftest_conservation(rng) -> str:
    for _ in range(5):
        n = int(rng.integers(1, 5))
        v = rng.uniform(10.0, 80.0, n)
        d = rng.uniform(-np.pi, np.pi, n)
        z_load = Impedance(float(rng.uniform(4.0, 25.0)), float(rng.uniform(-3.0, 3.0)))
        lines = tuple(
            Impedance(float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.0, 1.5)))
            for _ in range(n)
        )
        phasors = [Phasor(float(m), float(a)) for m, a in zip(v, d)]
        sol = solve_network(phasors, z_load, lines)
        s_units = complex_powers(phasors, sol.current)
        if np.max(np.abs(sol.p + 1j * sol.q - s_units)) > 1e-9 * max(
            1.0, float(np.abs(s_units).max())
        ):
            return "trigonometric and complex power paths disagree"
        z_tot = z_load.as_complex + sum(z.as_complex for z in lines)
        s_circuit = (sol.current.magnitude**2) * z_tot
        if abs(s_units.sum() - s_circuit) > 1e-9 * max(1.0, abs(s_circuit)):
            return "complex power does not match the circuit dissipation"
    return ""


def _cmd_selftest(args) -> int:
    rng = np.random.default_rng(20260810)
    suites = (
        ("dispatch-oracle", _selftest_dispatch),
        ("jacobian-finite-difference", _selftest_jacobians),
        ("power-conservation", _selftest_conservation),
    )
    failed = False
    for name, fn in suites:
        msg = fn(rng)
        if msg:
            failed = True
            print(f"{name}: FAIL ({msg})")
        else:
            print(f"{name}: ok")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadegrid",
        description=(
            "Simulate islanded microgrids of series-cascaded inverters under "
            "decentralized economical sharing, and analyze their stability."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dispatch", help="optimal dispatch table or sharing-map export")
    d.add_argument("--config", required=True)
    d.add_argument("--load", type=float, help="total load in W")
    d.add_argument("--bounds", action="store_true", help="enforce per-DG bounds")
    d.add_argument("--map", action="store_true", help="export the sharing map")
    d.add_argument("--from", dest="from_value", type=float)
    d.add_argument("--to", dest="to_value", type=float)
    d.add_argument("--samples", type=int, default=1001)
    d.add_argument("--domain", choices=("load", "current"), default="load")
    d.add_argument("--out")
    d.set_defaults(fn=_cmd_dispatch)

    s = sub.add_parser("simulate", help="run one load-step scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--schedule")
    s.add_argument("--scheme", choices=SCHEMES, default=ECONOMICAL)
    s.add_argument("--t-end", dest="t_end", type=float, required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(fn=_cmd_simulate)

    c = sub.add_parser("compare", help="economical vs proportional cost")
    c.add_argument("--config", required=True)
    c.add_argument("--schedule")
    c.add_argument("--t-end", dest="t_end", type=float, required=True)
    c.add_argument("--dt", type=float)
    c.add_argument("--out", required=True)
    c.add_argument("--no-plot", action="store_true")
    c.set_defaults(fn=_cmd_compare)

    r = sub.add_parser("rootlocus", help="eigenvalue sweep over load or filter cutoff")
    r.add_argument("--config", required=True)
    r.add_argument("--param", choices=(PARAM_LOAD_RESISTANCE, PARAM_FILTER_CUTOFF), required=True)
    r.add_argument("--from", dest="from_value", type=float, required=True)
    r.add_argument("--to", dest="to_value", type=float, required=True)
    r.add_argument("--steps", type=int, required=True)
    r.add_argument(
        "--load-resistance",
        type=float,
        default=12.0,
        help="fixed load for the w_c sweep",
    )
    r.add_argument("--out", required=True)
    r.add_argument("--no-plot", action="store_true")
    r.set_defaults(fn=_cmd_rootlocus)

    t = sub.add_parser("selftest", help="run the built-in oracle suites")
    t.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
