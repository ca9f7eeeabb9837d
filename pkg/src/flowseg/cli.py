"""Command-line entry point.

Subcommands mirror the pipeline stages; every flag given on the command
line overrides the corresponding config-file value. Exit codes: 0 on
success, 2 on validation errors, 3 on I/O or file-format errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import PipelineConfig, apply_overrides, load_config
from .errors import FormatError, ValidationError
from . import pipeline

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowseg",
        description=(
            "Foreground segmentation from background feature density: "
            "coupling-flow and kNN estimators with multi-layer fusion."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--layers", help="comma-separated layer ids, e.g. 3,4,5,6")
        p.add_argument("--estimator", choices=("flow", "knn", "both"))
        p.add_argument("--fusion", choices=("min", "max", "logistic"))
        p.add_argument("--out", dest="out_dir", help="output directory override")
        p.add_argument("--features-dir", dest="features_dir")
        p.add_argument("--masks-dir", dest="masks_dir")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    for name, help_text in (
        ("gen-synthetic", "write the bundled synthetic corpus"),
        ("prepare", "score receptive fields and pool background datasets"),
        ("train", "fit density estimators and calibrations"),
        ("fit-fusion", "fit the fusion rule and operating threshold"),
        ("segment", "write likelihood maps and masks"),
        ("evaluate", "compute metric tables and figures"),
        ("bench", "report scoring timings and artifact sizes"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "segment":
            p.add_argument("image_ids", nargs="*", help="image ids (default: test split)")
        if name == "evaluate":
            p.add_argument("image_ids", nargs="*", help="image ids (default: test split)")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=3)

    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = dict(
        seed=args.seed,
        layers=args.layers,
        estimator=args.estimator,
        fusion=args.fusion,
        out_dir=args.out_dir,
        features_dir=args.features_dir,
        masks_dir=args.masks_dir,
    )
    if args.no_figures:
        overrides["figures"] = False
    return apply_overrides(config, **overrides)


def _print_summary(summary) -> None:
    def default(obj):
        return getattr(obj, "__dict__", str(obj))

    print(json.dumps(summary, indent=2, sort_keys=True, default=default))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "gen-synthetic":
            summary = pipeline.cmd_gen_synthetic(config)
        elif args.command == "prepare":
            summary = pipeline.cmd_prepare(config)
        elif args.command == "train":
            summary = pipeline.cmd_train(config)
        elif args.command == "fit-fusion":
            summary = pipeline.cmd_fit_fusion(config)
        elif args.command == "segment":
            summary = pipeline.cmd_segment(config, args.image_ids or None)
        elif args.command == "evaluate":
            summary = pipeline.cmd_evaluate(config, args.image_ids or None)
        else:
            summary = pipeline.cmd_bench(config, repeats=args.repeats)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    _print_summary(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
