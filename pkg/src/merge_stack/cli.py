"""Command-line front end.

Subcommands: run (one scenario), ensemble (seed sweep), sequence (merging
order only), gains (explicit gain set + string-stability verdict),
feasible-set (terminal-constraint comparison). Exit codes: 0 clean, 2 the
run finished but controllers entered degraded mode, 1 fatal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .params import LonWeights
from .reachability import (
    INVARIANT_TERMINAL,
    PROPOSED_TERMINAL,
    ZERO_TERMINAL,
    Polytope,
    feasible_set_report,
)
from .scenario import ScenarioError, build_info_vectors, load_scenario_file
from .sequencing import build_weight_matrix, evaluate_assignment_cost, fifo_sequence, road_densities, solve_milp
from .simulation import (
    FIFO,
    MILP,
    SimulationError,
    compute_metrics,
    csv_text,
    run_scenario,
    write_jsonl,
)
from .stability import classify_string_stability, explicit_gains


def _cmd_run(args) -> int:
    config = load_scenario_file(args.scenario)
    log = run_scenario(config, args.sequencer, args.duration, args.seed,
                       collect_broadcasts=args.dump_plans)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{config.name}_{log.sequencer}_seed{log.seed}"
    (out / f"{stem}.csv").write_text(csv_text(log), encoding="utf-8")
    with open(out / f"{stem}.jsonl", "w", encoding="utf-8") as fh:
        write_jsonl(log, fh)
    metrics = compute_metrics(log, config.lon_weights, config.limits.safe_spacing)
    summary = {
        "log": str(out / f"{stem}.csv"),
        "steps": log.n_steps,
        "degraded_events": log.degraded_events,
        "min_same_lane_gap_m": log.min_same_lane_gap,
        "convergence_time_s": {str(k): v for k, v in metrics.convergence_time.items()},
        "l2_ratios": {str(k): v for k, v in metrics.l2_ratios.items()},
    }
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 2 if log.degraded_events else 0


def _cmd_ensemble(args) -> int:
    config = load_scenario_file(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    degraded = 0
    rows = []
    for seed in range(args.seeds):
        log = run_scenario(config, args.sequencer, args.duration, seed)
        degraded += log.degraded_events
        (out / f"{config.name}_{log.sequencer}_seed{seed}.csv").write_text(
            csv_text(log), encoding="utf-8")
        metrics = compute_metrics(log, config.lon_weights, config.limits.safe_spacing)
        times = [t for t in metrics.convergence_time.values()]
        rows.append({
            "seed": seed,
            "mean_convergence_s": float(np.mean(times)) if times else None,
            "mean_cost": float(np.mean(list(metrics.accumulated_cost.values())))
            if metrics.accumulated_cost else None,
            "degraded": log.degraded_events,
        })
    print(json.dumps({"runs": rows}, indent=2, sort_keys=True))
    return 2 if degraded else 0


def _cmd_sequence(args) -> int:
    config = load_scenario_file(args.scenario)
    positions, velocities = build_info_vectors(config)
    m, r = len(config.mainline), len(config.ramp)
    d_star = config.spacing_vector()
    dens = road_densities(positions, m, r)
    S = build_weight_matrix(m, r, dens[0], dens[1])
    if args.baseline == FIFO:
        assignment = fifo_sequence(positions, m)
        objective, diagnostics = evaluate_assignment_cost(
            assignment, positions, velocities, d_star, config.seq_weights, S)
        nodes = 0
    else:
        solution = solve_milp(positions, velocities, m, r, d_star,
                              config.seq_weights, S)
        assignment = solution.assignment
        objective = solution.objective
        diagnostics = solution.diagnostics
        nodes = solution.nodes_explored
    payload = {
        "sequence": [int(x) for x in assignment.sequence()],
        "sequence_ids": [int(x) for x in assignment.position_of()],
        "objective": objective,
        "nodes_explored": nodes,
        "pairs": {
            "spacing_dev": [float(x) for x in diagnostics.spacing_dev],
            "sign_spacing": [int(x) for x in diagnostics.sign_spacing],
            "sign_speed": [int(x) for x in diagnostics.sign_speed],
            "trend_penalty": [int(x) for x in diagnostics.trend_penalty],
        },
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.dump_diagnostics:
        Path(args.dump_diagnostics).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_gains(args) -> int:
    weights = LonWeights(state=np.array(args.state), control=args.control,
                         terminal=args.terminal)
    weights.validate()
    gains = explicit_gains(weights, args.horizon, args.time_step)
    verdict = classify_string_stability(gains)
    payload = {
        "K_b": [float(x) for x in gains.feedback],
        "K_f": [float(x) for x in gains.feedforward],
        "k_f": gains.feedforward_total,
        "p": verdict.p,
        "q": verdict.q,
        "stable": verdict.stable,
        "worst_omega": verdict.worst_omega,
        "worst_magnitude": verdict.worst_magnitude,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_feasible_set(args) -> int:
    from .params import VehicleLimits

    limits = VehicleLimits(jerk_min=-args.jerk_bound, jerk_max=args.jerk_bound,
                           spacing_dev_min=-args.spacing_bound,
                           spacing_dev_max=args.spacing_bound)
    invariant = None
    if args.variant == INVARIANT_TERMINAL:
        half = args.invariant_halfwidth
        invariant = Polytope.from_box([-half, -half, -half], [half, half, half])
    report = feasible_set_report(
        limits, args.np, [args.variant], args.time_step,
        speed_diff_bound=args.speed_diff_bound, accel_bound=args.accel_bound,
        invariant_set=invariant, n_samples=args.samples, seed=args.seed)
    variant = report.variants[0]
    payload = {
        "variant": variant.kind,
        "halfspaces": [
            {"normal": [float(x) for x in row], "offset": float(off)}
            for row, off in zip(variant.feasible_set.A, variant.feasible_set.b)
        ],
        "equalities": [
            {"normal": [float(x) for x in row], "offset": float(off)}
            for row, off in zip(variant.feasible_set.A_eq, variant.feasible_set.b_eq)
        ],
        "volume": variant.volume,
        "volume_ci95": list(variant.volume_ci),
        "extents": [list(e) for e in variant.extents],
        "samples": report.n_samples,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.point_cloud:
        rng = np.random.default_rng(args.seed + 1)
        lower = np.array([limits.spacing_dev_min, -args.speed_diff_bound, -args.accel_bound])
        upper = np.array([limits.spacing_dev_max, args.speed_diff_bound, args.accel_bound])
        pts = rng.uniform(lower, upper, size=(20000, 3))
        inside = variant.feasible_set.contains(pts)
        with open(args.point_cloud, "w", encoding="utf-8") as fh:
            fh.write("spacing_dev_m,speed_diff_mps,accel_mps2\n")
            for row in pts[inside]:
                fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="merge-stack",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--sequencer", choices=[MILP, FIFO], default=MILP)
    p_run.add_argument("--duration", type=float, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--dump-plans", action="store_true",
                       help="include per-step broadcast records in the jsonl log")
    p_run.set_defaults(func=_cmd_run)

    p_ens = sub.add_parser("ensemble", help="run a seed sweep of one scenario")
    p_ens.add_argument("--scenario", required=True)
    p_ens.add_argument("--seeds", type=int, default=20)
    p_ens.add_argument("--sequencer", choices=[MILP, FIFO], default=MILP)
    p_ens.add_argument("--duration", type=float, default=None)
    p_ens.add_argument("--out", default="out")
    p_ens.set_defaults(func=_cmd_ensemble)

    p_seq = sub.add_parser("sequence", help="compute the merging sequence only")
    p_seq.add_argument("--scenario", required=True)
    p_seq.add_argument("--baseline", choices=[MILP, FIFO], default=MILP)
    p_seq.add_argument("--dump-diagnostics", default=None)
    p_seq.set_defaults(func=_cmd_sequence)

    p_gains = sub.add_parser("gains", help="explicit gains and string-stability verdict")
    p_gains.add_argument("--state", type=float, nargs=3,
                         default=[0.01, 0.02, 0.01],
                         metavar=("Q_SPACING", "Q_SPEED", "Q_ACCEL"))
    p_gains.add_argument("--control", type=float, default=0.01)
    p_gains.add_argument("--terminal", type=float, default=1600.0)
    p_gains.add_argument("--horizon", type=int, default=12)
    p_gains.add_argument("--time-step", type=float, default=0.1)
    p_gains.set_defaults(func=_cmd_gains)

    p_fs = sub.add_parser("feasible-set", help="initial feasible set of one terminal design")
    p_fs.add_argument("--variant",
                      choices=[ZERO_TERMINAL, INVARIANT_TERMINAL, PROPOSED_TERMINAL],
                      default=PROPOSED_TERMINAL)
    p_fs.add_argument("--np", type=int, default=10, help="horizon steps")
    p_fs.add_argument("--time-step", type=float, default=0.1)
    p_fs.add_argument("--spacing-bound", type=float, default=30.0)
    p_fs.add_argument("--speed-diff-bound", type=float, default=3.0)
    p_fs.add_argument("--accel-bound", type=float, default=3.0)
    p_fs.add_argument("--jerk-bound", type=float, default=5.0)
    p_fs.add_argument("--invariant-halfwidth", type=float, default=1.0)
    p_fs.add_argument("--samples", type=int, default=1_000_000)
    p_fs.add_argument("--seed", type=int, default=0)
    p_fs.add_argument("--point-cloud", default=None,
                      help="also write a CSV sample of member states")
    p_fs.set_defaults(func=_cmd_feasible_set)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, SimulationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
