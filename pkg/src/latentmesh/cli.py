"""Command line entry point: ``latentmesh {verify,cost,timing,run}``.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import bench
from .errors import AssetError, LatentMeshError

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run manifest")
    common.add_argument("--seed", type=int, help="override the manifest seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=("sequential", "parallel"), help="LDMP execution mode")
    common.add_argument("--synthetic", action="store_true", default=None,
                        help="synthesise any input the manifest does not provide")

    parser = argparse.ArgumentParser(prog="latentmesh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", parents=[common], help="run the oracle and invariant checks")
    verify.add_argument("--inject-fault", action="store_true",
                        help="use a sign-flipped inverse wavelet to confirm the checks can fail")
    sub.add_parser("cost", parents=[common], help="emit the MAC/parameter comparison table")
    timing = sub.add_parser("timing", parents=[common], help="time sequential vs parallel LDMP")
    timing.add_argument("--repeats", type=int, default=20)
    run = sub.add_parser("run", parents=[common], help="end-to-end forward pass")
    run.add_argument("--metrics", action="store_true", help="require ground truth and write metrics")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        manifest = bench.load_manifest(args.config, seed=args.seed, synthetic=args.synthetic, out=args.out,
                                       mode=args.mode)
        if args.command == "run" and args.metrics:
            manifest.metrics = True
        if args.command == "verify":
            report = bench.cmd_verify(manifest, inject_fault=args.inject_fault)
            status = EXIT_OK if report["passed"] else EXIT_CHECK
        elif args.command == "cost":
            report, status = bench.cmd_cost(manifest), EXIT_OK
        elif args.command == "timing":
            report, status = bench.cmd_timing(manifest, repeats=args.repeats), EXIT_OK
        else:
            report, status = bench.cmd_run(manifest), EXIT_OK
    except bench.CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except AssetError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LatentMeshError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    json.dump(_summary(report), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return status


def _summary(report):
    # per-sample timings and full entry lists go to files; keep stdout readable
    slim = dict(report)
    for key in ("sequential", "parallel"):
        if key in slim:
            slim[key] = {k: v for k, v in slim[key].items() if k != "samples_ms"}
    return slim


if __name__ == "__main__":
    sys.exit(main())
