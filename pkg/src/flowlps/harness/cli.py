"""Command-line entry point: ``flowlps {solve,bench,verify,make-data,fit-prior}``."""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import FitFailure, NumericFailure, UnsupportedOperation
from ..prior import fit_em
from ..rng import derive
from .bench import run_benchmark
from .config import load_config
from .data import generate_blob_dataset, parse_shape
from .io import save_prior

log = logging.getLogger("flowlps")


def cmd_solve(args):
    cfg = load_config(args.config)
    changes = {"instances": 1, "sweep": {}}
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = dataclasses.replace(cfg, **changes)
    res = run_benchmark(cfg, out=args.out or cfg.out)
    for row in res.rows:
        print(f"{row['solver']:>16} N_L={row['n_langevin']:>5} mse={row['mse']:.6g} "
              f"psnr={row['psnr_db']:.2f} dB")
    print(f"wrote {res.out}")
    return 0


def cmd_bench(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    res = run_benchmark(cfg, out=args.out or cfg.out)
    for row in res.summary:
        print(f"{row['solver']:>16} N_L={row['n_langevin']:>5} N_P={row['n_total']:>3} "
              f"rho={row['rho_schedule']:<22} median mse={row['median_mse']:.6g} "
              f"({row['n_instances']} instances)")
    print(f"wrote {len(res.rows)} rows to {res.out / 'results.csv'}")
    return 0


def cmd_verify(args):
    from .verify import run_suite

    report = run_suite(args.level, report_path=args.report, stream=sys.stdout)
    failed = [r["check"] for r in report if not r["passed"]]
    if failed:
        print(f"FAILED checks: {', '.join(failed)}")
        return 1
    print(f"all {len(report)} checks passed")
    return 0


def cmd_make_data(args):
    shape = parse_shape(args.shape)
    samples, gmm = generate_blob_dataset(shape, args.n, derive(args.seed, "make-data"), k=args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, samples=samples, shape=np.array(shape))
    prior_path = out.with_suffix(".prior.json")
    save_prior(gmm, prior_path)
    print(f"wrote {samples.shape[0]} samples of dim {gmm.dim} to {out}; generating prior to {prior_path}")
    return 0


def cmd_fit_prior(args):
    path = Path(args.data)
    if path.suffix == ".npz":
        with np.load(path) as f:
            data = f["samples"]
    elif path.suffix == ".npy":
        data = np.load(path)
    else:
        data = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    gmm = fit_em(data, args.k, rng=derive(args.seed, "fit-prior"), max_iter=args.max_iter)
    save_prior(gmm, args.out)
    print(f"fitted {args.k}-component mixture to {data.shape[0]} samples; wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="flowlps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the configured solvers on one instance")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a benchmark sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run oracle-backed checks")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--report", help="write a JSON-lines report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("make-data", help="sample a synthetic blob dataset")
    p.add_argument("--shape", required=True, help="n or HxW, e.g. 16 or 8x8")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output .npz; the prior goes next to it")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("fit-prior", help="fit a Gaussian mixture by EM")
    p.add_argument("--data", required=True, help=".npz (key 'samples'), .npy, .csv or whitespace text")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_fit_prior)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, NumericFailure, UnsupportedOperation, FitFailure) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
