"""Command line entry points: field generation, deployment, scenario runs,
and direct completion from sampled field values."""

from __future__ import annotations

import argparse
import sys

from . import completion, experiments, field, network


def _cmd_generate_field(args) -> int:
    if args.kind == "peaks":
        grid = field.generate_peaks_field(args.rows, args.cols)
    else:
        grid = field.generate_smooth_random_field(
            args.rows, args.cols,
            correlation_length=args.correlation_length, seed=args.seed,
        )
    field.save_field_csv(grid, args.out)
    print(f"wrote {args.rows}x{args.cols} {args.kind} field to {args.out}")
    return 0


def _cmd_deploy(args) -> int:
    deployment = network.deploy((args.rows, args.cols), args.rho, seed=args.seed)
    try:
        network.build_graph(deployment, comm_radius=args.radius)
    except network.ConnectivityError as exc:
        if not args.allow_disconnected:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"warning: {exc}", file=sys.stderr)
    network.save_deployment_json(deployment, args.out)
    print(f"deployed {deployment.n} nodes (sink {deployment.sink_id}) to {args.out}")
    return 0


def _cmd_run(args) -> int:
    config = experiments.load_scenario_json(args.config)
    records = experiments.run_scenario(config)
    experiments.emit_results_csv(records, args.out)
    failures = sum(1 for r in records if r.error is not None)
    print(f"{len(records)} trials ({failures} failed) -> {args.out}")
    return 0 if failures == 0 else 2


def _cmd_complete(args) -> int:
    grid = field.load_field_csv(args.field)
    deployment = network.load_deployment_json(args.deployment)
    samples = field.sample_field(grid, deployment)
    obs = completion.observations_from_deployment(deployment, samples)
    result = completion.complete(obs, args.delta)
    recovered = field.FieldGrid(
        rows=grid.rows, cols=grid.cols, values=result.X_hat, round_index=grid.round_index
    )
    field.save_field_csv(recovered, args.out)
    err = completion.field_error(result.X_hat, grid.values)
    print(
        f"completed {grid.rows}x{grid.cols} field from {obs.n} samples: "
        f"rank {result.numerical_rank}, spectral error {err:.4g} -> {args.out}"
    )
    if args.singular_values:
        completion.save_singular_values_csv(result, args.singular_values)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="deca",
        description="Two-level field recovery over sensor networks: "
        "compressive aggregation plus matrix completion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-field", help="write a synthetic field CSV")
    p.add_argument("--kind", choices=["peaks", "smooth-random"], default="peaks")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlation-length", type=float, default=25.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_field)

    p = sub.add_parser("deploy", help="place nodes on the grid and write JSON")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=network.DEFAULT_COMM_RADIUS)
    p.add_argument("--allow-disconnected", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_deploy)

    p = sub.add_parser("run", help="run a scenario config and emit results CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="results.csv")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("complete", help="nuclear-norm completion from field samples")
    p.add_argument("--field", required=True)
    p.add_argument("--deployment", required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--out", default="recovered.csv")
    p.add_argument("--singular-values")
    p.set_defaults(func=_cmd_complete)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
