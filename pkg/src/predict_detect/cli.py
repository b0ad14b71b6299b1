"""Command line entry point: ``predict-detect run|gen-stream|replay|split-analyze``."""
import argparse
import csv
import logging
import sys
from pathlib import Path

from .dataio import DataError, load_csv, normalize
from .harness import ConfigError, ExperimentConfig, generate_stream, parse_seeds, run_experiment
from .learners import max_splits_within_tolerance, split_round_robin, rank_features
from .stream import load_stream

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "seeds", None):
        cfg.seeds = parse_seeds(args.seeds)
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg


def _report(records, errors, out):
    for r in records:
        print(f"{r.label}\tseed={r.seed}\tacc={r.accuracy:.4f}\tf1={r.f_measure:.4f}"
              f"\tlabel%={r.labeling_pct:.2f}\tconfirmed={r.confirmed}")
    if errors:
        print(f"{len(errors)} run(s) failed, see {Path(out) / 'errors.csv'}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_run(args):
    cfg = _load_config(args)
    records, errors = run_experiment(cfg, workers=args.workers)
    return _report(records, errors, cfg.output_dir)


def cmd_gen_stream(args):
    cfg = _load_config(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    X, y, tags = generate_stream(cfg, args.output, seed=seed, kind=args.detector)
    print(f"wrote {len(y)} samples to {args.output}")
    return EXIT_OK


def cmd_replay(args):
    cfg = _load_config(args)
    load_stream(args.stream)  # fail fast on a malformed dump
    records, errors = run_experiment(cfg, stream_path=str(args.stream), workers=args.workers)
    return _report(records, errors, cfg.output_dir)


def cmd_split_analyze(args):
    data = load_csv(args.csv, args.label_column)
    if not args.no_normalize:
        data, _ = normalize(data)
    best, accs = max_splits_within_tolerance(data, args.max_k, args.tol, rng_seed=args.seed)
    mono = accs[1][0]
    ranking = rank_features(data)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["k", "subset", "features", "cv_accuracy", "monolithic_accuracy", "within_tolerance"])
        for k in sorted(accs):
            subsets = [tuple(range(data.dim))] if k == 1 else split_round_robin(ranking, k).subsets
            for i, (acc, feats) in enumerate(zip(accs[k], subsets)):
                names = " ".join(data.feature_names[j] for j in feats)
                w.writerow([k, i, names, f"{acc:.6f}", f"{mono:.6f}",
                            int(acc >= mono - args.tol - 1e-12)])
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"best_k={best}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="predict-detect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seeds", help="override seeds, e.g. 0-2 or 0,4,7")
        sp.add_argument("--output-dir", help="override the output directory")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: $PD_WORKERS or 1)")

    sp = sub.add_parser("run", help="run a full experiment")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gen-stream", help="generate and dump one adversarial stream")
    sp.add_argument("config")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--detector", default=None, help="defender the adversary attacks")
    sp.add_argument("--seeds", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gen_stream)

    sp = sub.add_parser("replay", help="run the configured detectors on a dumped stream")
    sp.add_argument("stream")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("split-analyze", help="largest K-way feature split within tolerance")
    sp.add_argument("csv")
    sp.add_argument("--max-k", type=int, default=10)
    sp.add_argument("--tol", type=float, default=0.05)
    sp.add_argument("--label-column", default="label")
    sp.add_argument("--no-normalize", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_split_analyze)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
