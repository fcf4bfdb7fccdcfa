"""``react`` command-line entry point.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure,
3 degenerate input (for example a flat image given to ``metrics``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .exceptions import DegenerateInputError, ValidationError

log = logging.getLogger("reactmc")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_DEGENERATE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="react", description="Autofocus rigid motion estimation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--out", help="dataset directory (default: output_dir from the config)")

    e = sub.add_parser("estimate", help="estimate motion for a dataset")
    e.add_argument("-c", "--config", required=True)
    e.add_argument("-d", "--dataset", required=True)
    e.add_argument("-o", "--out", help="results directory (default: <dataset>/estimate)")

    c = sub.add_parser("costmap", help="sample cost maps about the true motion")
    c.add_argument("-c", "--config", required=True)
    c.add_argument("-d", "--dataset", required=True)
    c.add_argument("-x", "--estimates", required=True, help="trajectory JSON")
    c.add_argument("-o", "--out", help="output directory (default: <dataset>/costmap)")

    m = sub.add_parser("metrics", help="gradient entropy of an image and/or u-IEPA of profiles")
    m.add_argument("--image", help="float32 raw image (stem or .f32 with JSON sidecar) or .npy")
    m.add_argument("--mask", help="mask in the same formats; nonzero voxels are inside")
    m.add_argument("--profiles", help="profiles CSV with a 'delta=<mm>' header")
    m.add_argument("--delta", type=float, help="override the profile sampling interval (mm)")
    return p


def _load_array(path):
    from .io import load_image

    if str(path).endswith(".npy"):
        try:
            return np.load(path)
        except FileNotFoundError:
            raise ValidationError(f"{path}: not found") from None
    return load_image(path).data


def _metrics(args):
    from .metrics import EdgeProfileSet, gradient_entropy, u_iepa

    if not args.image and not args.profiles:
        raise ValidationError("metrics: give --image and/or --profiles")
    result = {}
    if args.image:
        img = _load_array(args.image)
        mask = _load_array(args.mask) != 0 if args.mask else None
        result["gradient_entropy"] = gradient_entropy(img, mask)
    if args.profiles:
        prof = EdgeProfileSet.from_csv(args.profiles)
        result["u_iepa"] = u_iepa(prof, args.delta)
    for k, v in result.items():
        print(f"{k} {v!r}")
    return result


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "metrics":
        _metrics(args)
        return
    from .config import load_config
    from . import experiment

    cfg = load_config(args.config)
    if args.command == "simulate":
        manifest = experiment.simulate(cfg, args.out)
        print(json.dumps(manifest["derived"], indent=1))
    elif args.command == "estimate":
        summary = experiment.run_estimate(cfg, args.dataset, args.out)
        print(json.dumps(summary, indent=1))
    elif args.command == "costmap":
        summary = experiment.run_costmap(cfg, args.dataset, args.estimates, args.out)
        print(json.dumps(summary, indent=1))


def main(argv=None):
    try:
        run(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    except DegenerateInputError as exc:
        print(f"react: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValidationError as exc:
        print(f"react: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"react: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
