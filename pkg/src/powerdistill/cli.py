"""Command-line entry point: ``gen``, ``solve`` and ``bench``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .errors import ConfigError, ExportError
from .netgen import Dataset, GenConfig, generate_dataset
from .teachers import TEACHERS, DEFAULT_MAX_ITER, DEFAULT_TOL, label_dataset, save_labels


def _parse_list(text: str, cast):
    return [cast(v) for v in text.split(",") if v.strip()]


def _parse_sweep(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected axis=v1,v2,...")
    axis, values = text.split("=", 1)
    return axis.strip(), _parse_list(values, int)


def cmd_gen(args) -> int:
    defaults = GenConfig()
    cfg = GenConfig(
        num_links=args.k,
        area=args.area if args.area is not None else defaults.area,
        d_min=args.dmin if args.dmin is not None else defaults.d_min,
        d_max=args.dmax if args.dmax is not None else defaults.d_max,
        fading=args.fading,
        noise_power=args.noise if args.noise is not None else defaults.noise_power,
        threshold=args.threshold if args.threshold is not None else defaults.threshold,
    )
    ds = generate_dataset(cfg, args.n, args.seed)
    ds.save(args.out)
    clipped = sum(inst.clipped for inst in ds)
    print(f"wrote {len(ds)} instances (K={cfg.num_links}) to {args.out}"
          + (f"; {clipped} receivers clipped to the area" if clipped else ""))
    return 0


def cmd_solve(args) -> int:
    ds = Dataset.load(args.dataset)
    labels = label_dataset(ds, args.teacher, max_iter=args.max_iter, tol=args.tol, levels=args.levels)
    save_labels(labels, args.out)
    n_conv = sum(lab.converged for lab in labels)
    mean = sum(lab.sum_rate for lab in labels) / len(labels)
    print(f"{args.teacher}: {len(labels)} labels, {n_conv} converged, mean sum rate {mean:.4f} -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .harness import ExperimentConfig, export_summary, format_ranking, run_experiment, sweep

    cfg = ExperimentConfig.load(args.config)
    cfg.output_dir = args.out
    if args.seeds:
        cfg.seeds = args.seeds
    if args.sweep:
        cfg.sweep_axis, cfg.sweep_values = args.sweep
    cfg.validate()
    if cfg.sweep_axis != "none":
        results = sweep(cfg)
    else:
        results = [run_experiment(cfg)]
    for res in results:
        for seed, method, msg in res.failures:
            print(f"FAILED seed={seed} method={method}: {msg}", file=sys.stderr)
    _, ranking = export_summary(results, args.out)
    print(format_ranking(ranking))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerdistill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="sample a dataset of network instances")
    g.add_argument("--k", type=int, required=True, help="number of links")
    g.add_argument("--n", type=int, required=True, help="number of instances")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--fading", action="store_true")
    g.add_argument("--area", type=float)
    g.add_argument("--dmin", type=float)
    g.add_argument("--dmax", type=float)
    g.add_argument("--noise", type=float, help="noise power")
    g.add_argument("--threshold", type=float, help="interference-graph distance threshold")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="label a dataset with a classical solver")
    s.add_argument("--dataset", required=True)
    s.add_argument("--teacher", choices=TEACHERS, default="fplinq")
    s.add_argument("--out", required=True)
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    s.add_argument("--levels", type=int, default=11, help="grid levels for the oracle")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("--config", required=True)
    b.add_argument("--sweep", type=_parse_sweep, help="axis=v1,v2,...")
    b.add_argument("--seeds", type=lambda t: _parse_list(t, int))
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
