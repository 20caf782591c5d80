"""Command-line interface: ``globalseg {synth,train,segment,eval,pipeline}``.

Exit codes: 0 success, 1 usage error or missing input, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ABLATIONS, ConfigError, RunConfig
from .dataio import DatasetError, generate_synthetic, load_dataset, save_dataset
from .decode import read_segmentation_dir, segment_dataset, write_segmentation_dir
from .metrics import evaluate_manifest
from .model import load_checkpoint, save_checkpoint
from .pipeline import resolve_background_fraction
from .training import train

logger = logging.getLogger("globalseg")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p, *, ablate=False):
    p.add_argument("--config", type=Path, help="key=value run configuration file")
    p.add_argument("--preset", help="start from a synthetic preset (desk, bf-like, yti-like)")
    p.add_argument("--seed", type=int, help="seed for every stage (synthesis, training, decoding, evaluation)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key, e.g. --set train.epochs_stage1=5",
    )
    if ablate:
        p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[], help="disable a component")


def _add_decode_args(p):
    p.add_argument("--kprime", type=int, help="number of pseudo-activity groups")
    p.add_argument("--k", type=int, help="action clusters per group")
    p.add_argument("--svg", action="store_true", help="also write an SVG barcode per video")


def _add_eval_args(p):
    p.add_argument("--tau", type=float, help="share of ground-truth background frames removed for MoF")
    p.add_argument("--mof-bg", action="store_true", help="also report background-inclusive accuracy")
    p.add_argument("--f1-average", choices=("micro", "macro"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="globalseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True, help="dataset directory")

    p = sub.add_parser("train", help="train the embedding network")
    _add_config_args(p, ablate=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="run directory for checkpoints and the log")

    p = sub.add_parser("segment", help="segment every video of a dataset")
    _add_config_args(p)
    _add_decode_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="directory for per-video segmentation CSVs")

    p = sub.add_parser("eval", help="score segmentations against ground truth")
    _add_config_args(p)
    _add_eval_args(p)
    p.add_argument("--segmentations", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report file (JSON)")

    p = sub.add_parser("pipeline", help="synth, train, segment and eval in one go")
    _add_config_args(p, ablate=True)
    _add_decode_args(p)
    _add_eval_args(p)
    p.add_argument("--dataset", type=Path, help="use this dataset instead of synthesising one")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    return parser


def resolve_config(args) -> RunConfig:
    """File, then preset, then flags; later sources win."""
    overrides = {}
    if args.preset:
        overrides["preset"] = args.preset
    if args.seed is not None:
        for key in ("synth.seed", "train.seed", "decode.seed", "eval.seed"):
            overrides[key] = str(args.seed)
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if getattr(args, "kprime", None) is not None:
        overrides["decode.n_pseudo_activities"] = str(args.kprime)
    if getattr(args, "k", None) is not None:
        overrides["decode.n_actions"] = str(args.k)
    if getattr(args, "tau", None) is not None:
        overrides["eval.tau"] = repr(float(args.tau))
    if getattr(args, "f1_average", None):
        overrides["eval.f1_average"] = args.f1_average
    if getattr(args, "mof_bg", False):
        overrides["eval.include_mof_bg"] = "true"
    if args.config and not args.config.is_file():
        raise FileNotFoundError(f"config file not found: {args.config}")
    base = args.config.read_text() if args.config else ""
    config = RunConfig.parse(base, overrides)
    if getattr(args, "ablate", None):
        config = RunConfig.parse(config.dumps(), {"ablations": ",".join(dict.fromkeys((*config.ablations, *args.ablate)))})
    return config


def _header(config: RunConfig, command: str) -> str:
    return f"globalseg {command}\n" + config.dumps().rstrip("\n")


def cmd_synth(config: RunConfig, out: Path) -> Path:
    manifest = generate_synthetic(config.synth)
    path = save_dataset(manifest, out)
    config.write(out / "run_config.txt")
    logger.info("wrote %d videos to %s", len(manifest), out)
    return path


def cmd_train(config: RunConfig, dataset: Path, out: Path) -> Path:
    manifest = load_dataset(dataset)
    header = _header(config, "train")
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / "run_config.txt")
    start = time.perf_counter()
    result = train(manifest, config.effective_train_config(), out_dir=out, log_header=header)
    # rewrite the final checkpoint with the effective config attached
    path = save_checkpoint(out / "checkpoint.pt", result.model, result.drop_context, stage="final", run_config=config.dumps())
    logger.info("trained in %.1fs, checkpoint %s", time.perf_counter() - start, path)
    return path


def cmd_segment(config: RunConfig, checkpoint: Path, dataset: Path, out: Path, svg: bool = False) -> Path:
    model, _, _ = load_checkpoint(checkpoint)
    manifest = load_dataset(dataset)
    dec = config.decode
    bg = resolve_background_fraction(config, manifest)
    segmentation = segment_dataset(
        manifest,
        model,
        dec.n_pseudo_activities,
        dec.n_actions,
        background_fraction=bg,
        vocab_size=dec.vocab_size,
        n_init=dec.n_init,
        seed=dec.seed,
    )
    header = _header(config, "segment") + f"\nbackground_fraction_used={bg!r}"
    path = write_segmentation_dir(segmentation, out, svg=svg, header=header)
    logger.info("segmented %d videos into %d clusters", len(segmentation), segmentation.n_clusters)
    return path


def cmd_eval(config: RunConfig, segmentations: Path, dataset: Path, out: Path):
    manifest = load_dataset(dataset)
    if not manifest.has_ground_truth:
        raise UsageError(f"dataset {dataset} has no ground-truth label files")
    segmentation = read_segmentation_dir(segmentations)
    by_id = dict(zip(segmentation.video_ids, segmentation.labels))
    missing = [r.video_id for r in manifest.records if r.video_id not in by_id]
    if missing:
        raise UsageError(f"no segmentation for video(s) {', '.join(missing[:5])}")
    segmentation.labels = [by_id[r.video_id] for r in manifest.records]
    segmentation.video_ids = [r.video_id for r in manifest.records]
    report = evaluate_manifest(manifest, segmentation, config.eval, header={"run_config": config.dumps()})
    report.write(out)
    line = f"MoF {report.mof:.4f}  F1 {report.f1:.4f}"
    if report.mof_bg is not None:
        line += f"  MoF-BG {report.mof_bg:.4f}"
    print(line)
    return report


def cmd_pipeline(config: RunConfig, out: Path, dataset: Path | None = None, svg: bool = False):
    if dataset is None:
        dataset = out / "dataset"
        cmd_synth(config, dataset)
    checkpoint = cmd_train(config, dataset, out / "train")
    cmd_segment(config, checkpoint, dataset, out / "segments", svg=svg)
    return cmd_eval(config, out / "segments", dataset, out / "report.json")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
        if args.command == "synth":
            cmd_synth(config, args.out)
        elif args.command == "train":
            cmd_train(config, args.dataset, args.out)
        elif args.command == "segment":
            cmd_segment(config, args.checkpoint, args.dataset, args.out, svg=args.svg)
        elif args.command == "eval":
            cmd_eval(config, args.segmentations, args.dataset, args.out)
        elif args.command == "pipeline":
            cmd_pipeline(config, args.out, args.dataset, svg=args.svg)
    except FloatingPointError as exc:
        print(f"globalseg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DatasetError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"globalseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
