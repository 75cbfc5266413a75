"""Command-line entry point: ``tristage {train,eval,infer,plot,bench}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing/unreadable files, malformed curve files, bad checkpoints),
3 numeric failure (non-finite loss).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import ABLATIONS, ConfigError, SizingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("tristage")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_args(path, args, skip=("func",)):
    """Resolved arguments of a non-training command in key = value form."""
    lines = [f"# tristage {args.command} arguments"]
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'' if v is None else v}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- train ---------------------------------------------------------------------

def _run_fields():
    from .runconfig import FIELD_TYPES, RunConfig
    return [(f.name, FIELD_TYPES[f.name]) for f in fields(RunConfig)]


def add_train(sub):
    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, help="stop after this many total steps (schedule unchanged)")
    for name, tp in _run_fields():
        flag = "--" + name.replace("_", "-")
        if tp is bool:
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif tp is list:
            p.add_argument(flag, dest=name, nargs="+", default=None)
        elif name == "ablation":
            p.add_argument(flag, dest=name, default=None, choices=[""] + sorted(ABLATIONS),
                           help="one architectural ablation (empty for none)")
        elif name == "profile":
            p.add_argument(flag, dest=name, default=None, choices=["full", "tiny"])
        else:
            p.add_argument(flag, dest=name, type=tp, default=None)
    p.set_defaults(func=cmd_train)


def cmd_train(args):
    from .runconfig import RunConfig
    from .train import train

    run = RunConfig.load(args.config) if args.config else RunConfig()
    for name, _ in _run_fields():
        v = getattr(args, name)
        if v is not None:
            setattr(run, name, v)
    run.resolve()
    run.model_config()
    res = train(run, resume=args.resume, stop_at=args.stop_at,
                progress=lambda s, l: log.info("step %d loss %.5f", s, l))
    print(f"steps\t{res.steps}\nfinal_loss\t{res.final_loss:.6f}\n"
          f"checkpoint\t{res.checkpoint}\nlog\t{res.log_path}\nseconds\t{res.seconds:.1f}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

def add_eval(sub):
    p = sub.add_parser("eval", help="score a checkpoint or saved prediction maps")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="directory of 8-bit maps (per-dataset subfolders)")
    p.add_argument("--data", nargs="+", required=True, help="dataset roots with Imgs/ and GT/")
    p.add_argument("--out", required=True)
    p.add_argument("--per-decoder", action="store_true", help="also score the first and second decoders")
    p.add_argument("--small", action="store_true", help="add Small8/16/32 subset rows")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)


def cmd_eval(args):
    from .evaluate import evaluate_model, evaluate_predictions
    from .metrics import SUMMARY_FIELDS

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_args(out / "eval.cfg", args)
    if args.checkpoint:
        from .checkpoint import load_model
        reports = evaluate_model(load_model(args.checkpoint), args.data, out, args.per_decoder,
                                 args.small, args.batch_size, plot=not args.no_plot)
    else:
        if args.per_decoder:
            raise UsageError("--per-decoder needs --checkpoint")
        reports = evaluate_predictions(args.predictions, args.data, out, args.small,
                                       plot=not args.no_plot)
    w = csv.DictWriter(sys.stdout, SUMMARY_FIELDS, delimiter="\t", lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in rep.summary().items()})
    return EXIT_OK


# -- infer ---------------------------------------------------------------------

def add_infer(sub):
    p = sub.add_parser("infer", help="write prediction maps for a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--dump-features", action="store_true",
                   help="also save decoder-2/3 intermediate features as .npz")
    p.set_defaults(func=cmd_infer)


def cmd_infer(args):
    from .checkpoint import load_model
    from .infer import infer

    if not Path(args.input).is_dir():
        raise FileNotFoundError(f"input directory {args.input} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_args(out / "infer.cfg", args)
    manifest = infer(load_model(args.checkpoint), args.input, out, args.batch_size, args.dump_features)
    print(f"manifest\t{manifest}")
    return EXIT_OK


# -- plot ----------------------------------------------------------------------

def add_plot(sub):
    p = sub.add_parser("plot", help="draw PR/F curves or feature montages")
    p.add_argument("--curves", nargs="+", default=[],
                   help="curve files, optionally as label=path")
    p.add_argument("--features", nargs="+", default=[], help=".npz feature dumps")
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)


def cmd_plot(args):
    from .plotting import feature_montage, load_feature_dump, plot_curves

    if not args.curves and not args.features:
        raise UsageError("give --curves and/or --features")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_args(out / "plot.cfg", args)
    if args.curves:
        items = []
        for c in args.curves:
            label, _, path = c.rpartition("=")
            items.append((label or Path(path).stem, Path(path)))
        for path in plot_curves(items, out):
            print(f"figure\t{path}")
    for f in args.features:
        path = feature_montage(load_feature_dump(f), out / (Path(f).stem + "_montage.png"),
                               args.channels, title=Path(f).stem)
        print(f"figure\t{path}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------------

def add_bench(sub):
    p = sub.add_parser("bench", help="parameter count, MACs and timing")
    p.add_argument("--profile", choices=["full", "tiny"], default="tiny")
    p.add_argument("--input-size", type=int)
    p.add_argument("--crop-size", type=int)
    p.add_argument("--ablations", action="store_true", help="one row per ablation switch as well")
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="directory for bench.csv")
    p.set_defaults(func=cmd_bench)


def cmd_bench(args):
    from .complexity import benchmark
    from .config import profile
    from .model import build_model

    over = {}
    if args.input_size:
        over["input_size"] = args.input_size
    if args.crop_size:
        over["crop_size"] = args.crop_size
    variants = [""] + (sorted(ABLATIONS) if args.ablations else [])
    rows = []
    for ab in variants:
        model = build_model(profile(args.profile, ablation=ab or None, **over), seed=0)
        rep = benchmark(model, repeats=args.repeats, measure=not args.no_timing)
        rows.append([("variant", ab or "default")] + rep.rows())
    header = [k for k, _ in rows[0]]
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v for _, v in r])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_args(out / "bench.cfg", args)
        with open(out / "bench.csv", "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(header)
            for r in rows:
                cw.writerow([v for _, v in r])
    return EXIT_OK


def build_parser():
    p = Parser(prog="tristage", description="three-stage camouflaged object detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)
    for add in (add_train, add_eval, add_infer, add_plot, add_bench):
        add(sub)
    return p


def main(argv=None):
    from .checkpoint import CheckpointError
    from .data import DataError
    from .metrics import CurveFileError
    from .train import NumericError, ResourceError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SizingError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, CurveFileError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
