"""Command-line entry point.

    streamtta gen       synthesize a shifted stream (prototypes, stream, labels, truth)
    streamtta run       adapt over a stream and report accuracy
    streamtta ablate    run the five-variant component ablation on one stream
    streamtta baseline  entropy-filtered view-ensemble baseline

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from . import io as fmt
from .core import HyperParams, PrototypeSet, StreamTTAError, ingest
from .synth import ShiftSpec, generate
from .zeroshot import ViewEnsembleConfig

log = logging.getLogger("streamtta")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _prior(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamtta", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic domain-shift experiment")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--shift", type=float, required=True)
    g.add_argument("--noise", type=float, required=True)
    g.add_argument("--prior", type=_prior, default=None, help="comma-separated class frequencies")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)

    def data_args(p, labels_required=False):
        p.add_argument("--prototypes", type=Path, required=True)
        p.add_argument("--stream", type=Path, required=True)
        p.add_argument("--labels", type=Path, required=labels_required)
        p.add_argument("--truth", type=Path, help="truth manifest from `gen`, enables mean-error columns")
        p.add_argument("--config", type=Path)
        p.add_argument("--report", type=Path)

    r = sub.add_parser("run", help="adapt over a stream")
    data_args(r)
    r.add_argument("--trace", type=Path, help="write per-step records as JSON lines")

    a = sub.add_parser("ablate", help="component ablation table")
    data_args(a)

    b = sub.add_parser("baseline", help="view-ensemble baseline")
    data_args(b)
    b.add_argument("--views", type=int, required=True)
    b.add_argument("--keep", type=float, required=True)
    b.add_argument("--view-noise", type=float, required=True)
    b.add_argument("--seed", type=int, required=True)
    return parser


def cmd_gen(args) -> int:
    try:
        spec = ShiftSpec(
            num_classes=args.classes,
            dim=args.dim,
            samples_per_stream=args.count,
            shift_magnitude=args.shift,
            within_class_sigma=args.noise,
            class_prior=args.prior,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = generate(spec)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    fmt.write_embeddings(out / "prototypes.bin", data.prototypes.vectors)
    fmt.write_embeddings(out / "stream.bin", data.stream)
    fmt.write_labels(out / "labels.txt", data.labels)
    truth = {"spec": spec.to_dict(), "true_means": data.true_means.tolist()}
    (out / "truth.json").write_text(json.dumps(truth, indent=1) + "\n")
    print(f"wrote {len(data.stream)} samples, K={spec.num_classes}, d={spec.dim} to {out}")
    return 0


def _load_inputs(args):
    hyper = fmt.read_config(args.config) if args.config else HyperParams()
    protos = PrototypeSet.from_vectors(
        fmt.read_embeddings(args.prototypes), normalize=hyper.normalize_embeddings
    )
    stream = ingest(fmt.read_embeddings(args.stream), normalize=hyper.normalize_embeddings)
    if stream.ndim != 2 or len(stream) == 0:
        raise fmt.FormatError(f"{args.stream}: stream is empty")
    if stream.shape[1] != protos.dim:
        raise fmt.FormatError(
            f"{args.stream} has dim {stream.shape[1]} but {args.prototypes} has dim {protos.dim}"
        )
    labels = None
    if args.labels:
        labels = np.array(fmt.read_labels(args.labels))
        if len(labels) != len(stream):
            raise fmt.FormatError(
                f"{args.labels} has {len(labels)} labels for {len(stream)} samples"
            )
        if np.any(labels >= protos.num_classes):
            raise fmt.FormatError(f"{args.labels}: label out of range for K={protos.num_classes}")
    true_means = None
    if args.truth:
        true_means = np.array(json.loads(args.truth.read_text())["true_means"])
    return hyper, protos, stream, labels, true_means


def _print_report(report: dict) -> None:
    keys = ("accuracy", "zero_shot_accuracy", "gda_accuracy", "initial_mu_error", "final_mu_error")
    print(f"[{report['experiment']}] samples={report['num_samples']}")
    for k in keys:
        if k in report:
            v = report[k]
            print(f"  {k:<20} {100 * v:.2f}%" if k.endswith("accuracy") else f"  {k:<20} {v:.4f}")
    if "per_class_accuracy" in report:
        per = ", ".join(f"{100 * a:.1f}" for a in report["per_class_accuracy"])
        print(f"  per-class accuracy   [{per}]")
        print("  confusion matrix (rows = true class):")
        for row in report["confusion_matrix"]:
            print("    " + " ".join(f"{c:>6d}" for c in row))


def cmd_run(args) -> int:
    hyper, protos, stream, labels, true_means = _load_inputs(args)
    report, result = harness.run_report("run", stream, protos, hyper, labels, true_means)
    _print_report(report)
    if args.report:
        fmt.write_report(args.report, report)
    if args.trace:
        with open(args.trace, "w") as fh:
            for t in result.traces:
                fh.write(json.dumps(t.to_dict()) + "\n")
    return 0


def cmd_ablate(args) -> int:
    hyper, protos, stream, labels, true_means = _load_inputs(args)
    rows = harness.ablation_table(stream, protos, hyper, labels, true_means)
    print(harness.format_table(rows))
    if args.report:
        fmt.write_report(args.report, rows)
    return 0


def cmd_baseline(args) -> int:
    hyper, protos, stream, labels, _ = _load_inputs(args)
    try:
        config = ViewEnsembleConfig(args.views, args.keep, args.view_noise)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    preds = harness.baseline_predictions(stream, protos, config, args.seed)
    extra = {
        "views": config.num_views,
        "keep_fraction": config.keep_fraction,
        "view_noise_sigma": config.view_noise_sigma,
        "seed": args.seed,
    }
    if labels is not None:
        extra["zero_shot_accuracy"] = harness.accuracy(
            labels, harness.zero_shot_predictions(stream, protos)
        )
    report = harness.make_report("baseline", preds, labels, protos.num_classes, hyper, extra)
    _print_report(report)
    if args.report:
        fmt.write_report(args.report, report)
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "ablate": cmd_ablate, "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"streamtta {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StreamTTAError, ValueError, OSError) as exc:
        print(f"streamtta {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
