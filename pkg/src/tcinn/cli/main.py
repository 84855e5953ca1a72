import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

if __package__ is None or __package__ == "":
    sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from tcinn.autodiff.tensor import Tensor, get_precision, set_precision
from tcinn.cli.config import load_config_file, resolve_config
from tcinn.data.manifest import DatasetManifest, ManifestEntry, load_manifest, write_manifest
from tcinn.data.phantom import MANIFEST_NAME, PhantomConfig, generate_phantom_dataset
from tcinn.data.preprocess import center_crop, preprocess_image, read_scale_record, write_scale_record
from tcinn.data.tensor_file import read_tensor_array, read_tensor_file, write_tensor_file
from tcinn.errors import (
    CheckpointError,
    ConfigMismatchError,
    ManifestError,
    NumericalError,
    ShapeError,
    SingularMatrixError,
    TensorFileError,
    ValidationError,
)
from tcinn.metrics.report import (
    AblationRow,
    EvalOptions,
    evaluate_pairs,
    predict,
    write_ablation_table,
    write_report,
)
from tcinn.metrics.suv import SUVParams, load_voi_mask
from tcinn.model.network import ModelConfig
from tcinn.platform.runtime import default_workers, output_dirs
from tcinn.train.checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from tcinn.train.loop import CHECKPOINT_NAME, LOSS_CURVE_NAME, TrainConfig, read_loss_curve, train, write_loss_curve

logger = logging.getLogger("TCINN.CLI")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

CHANNEL_CHOICES = (3, 6, 9)


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def channel_list(text: str) -> List[int]:
    try:
        channels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated channel counts, got {text!r}")
    if not channels or any(c not in CHANNEL_CHOICES for c in channels):
        raise argparse.ArgumentTypeError(f"channel counts must be drawn from {CHANNEL_CHOICES}, got {text!r}")
    return channels


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key=value file; flags given here win")
    common.add_argument(
        "--precision", choices=("32", "64"), default=None, help="float width; 32, or the checkpoint's for infer"
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")
    return common


def _model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--blocks", type=positive_int, default=4, help="number of invertible blocks k")
    parser.add_argument("--depth", type=positive_int, default=8, help="convolutions per dense sub-network")
    parser.add_argument("--growth", type=positive_int, default=16, help="dense block growth rate")
    parser.add_argument("--clamp", type=positive_float, default=2.0, help="soft clamp bound on log-scales")
    parser.add_argument("--actnorm", action="store_true", help="add an actnorm layer to every block")


def _train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", type=Path, default=None, help="training manifest (required)")
    parser.add_argument("--epochs", type=positive_int, default=300)
    parser.add_argument("--lr", type=positive_float, default=1e-4, help="initial learning rate")
    parser.add_argument("--halving-period", type=positive_int, default=50, help="epochs per learning-rate halving")
    parser.add_argument("--lambda", dest="lam", type=float, default=1.0, help="weight of the forward loss term")
    parser.add_argument("--batch-size", type=positive_int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--clip-grad-norm", type=positive_float, default=None, help="global gradient norm limit")
    _model_options(parser)


def build_parsers() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    """The top-level parser and its subcommand parsers by name."""
    common = _common_options()
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="tcinn", description="Invertible tracer-conversion network", formatter_class=formatter
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    checkpoint_dir, report_dir = output_dirs()

    phantom = sub.add_parser("phantom", parents=[common], formatter_class=formatter, help="generate phantom pairs")
    phantom.add_argument("--seed", type=int, default=0)
    phantom.add_argument("--size", type=int, default=64, help="image height and width")
    phantom.add_argument("--pairs", type=positive_int, default=100)
    phantom.add_argument("--out", type=Path, default=checkpoint_dir.parent / "phantom", help="output directory")

    trainer = sub.add_parser("train", parents=[common], formatter_class=formatter, help="train a model")
    _train_options(trainer)
    trainer.add_argument("--channels", type=int, choices=CHANNEL_CHOICES, default=3, help="augmented channel count")
    trainer.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    trainer.add_argument("--validate-only", action="store_true", help="check inputs and exit without training")
    trainer.add_argument("--out", type=Path, default=checkpoint_dir, help="directory for model.ckpt and loss.csv")

    infer = sub.add_parser("infer", parents=[common], formatter_class=formatter, help="apply a trained model")
    infer.add_argument("--ckpt", type=Path, default=None, help="checkpoint (required)")
    infer.add_argument("--input", type=Path, default=None, help="1×H×W tensor file (required)")
    infer.add_argument("--out", type=Path, default=None, help="output tensor file (required)")
    infer.add_argument("--direction", choices=("forward", "inverse"), default="forward")
    infer.add_argument("--channels", type=int, choices=CHANNEL_CHOICES, default=None, help="expected checkpoint channels")

    evaluate = sub.add_parser("eval", parents=[common], formatter_class=formatter, help="score predictions")
    evaluate.add_argument("--manifest", type=Path, default=None, help="evaluation manifest (required)")
    evaluate.add_argument("--ckpt", type=Path, default=None, help="checkpoint to predict with")
    evaluate.add_argument("--pred-dir", type=Path, default=None, help="directory of precomputed predictions")
    evaluate.add_argument("--report", type=Path, default=report_dir / "report.csv")
    evaluate.add_argument("--direction", choices=("forward", "inverse"), default="forward")
    evaluate.add_argument("--ssim-mode", choices=("window", "global"), default="window")
    evaluate.add_argument("--mae-eps", type=positive_float, default=0.01, help="MAE reference floor")
    evaluate.add_argument("--suv-id", type=positive_float, default=None, help="injected dose in mCi")
    evaluate.add_argument("--suv-weight", type=positive_float, default=None, help="body weight in kg")
    evaluate.add_argument("--voi", type=Path, default=None, help="VOI mask tensor file")
    evaluate.add_argument("--voxel-volume", type=positive_float, default=1.0, help="mL per pixel")
    evaluate.add_argument("--workers", type=positive_int, default=default_workers())

    prepare = sub.add_parser("prepare", parents=[common], formatter_class=formatter, help="crop and scale raw pairs")
    prepare.add_argument("--manifest", type=Path, default=None, help="manifest of raw tensor files (required)")
    prepare.add_argument("--size", type=positive_int, default=200, help="center crop size")
    prepare.add_argument("--out", type=Path, default=None, help="output directory (required)")

    ablation = sub.add_parser("ablation", parents=[common], formatter_class=formatter, help="compare channel counts")
    _train_options(ablation)
    ablation.add_argument("--eval-manifest", type=Path, default=None, help="held-out manifest; defaults to --manifest")
    ablation.add_argument("--channels", type=channel_list, default=list(CHANNEL_CHOICES), help="e.g. 3,6,9")
    ablation.add_argument("--ssim-mode", choices=("window", "global"), default="window")
    ablation.add_argument("--out", type=Path, default=report_dir / "ablation", help="output directory")
    commands = {
        "phantom": phantom,
        "train": trainer,
        "infer": infer,
        "eval": evaluate,
        "prepare": prepare,
        "ablation": ablation,
    }
    return parser, commands


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = ["--" + name.replace("_", "-") for name in names if getattr(args, name) is None]
    if missing:
        raise ValidationError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def _train_config(args: argparse.Namespace, channels: int) -> TrainConfig:
    model = ModelConfig(
        channels=channels,
        blocks=args.blocks,
        depth=args.depth,
        growth=args.growth,
        clamp=args.clamp,
        actnorm=args.actnorm,
    )
    return TrainConfig(
        epochs=args.epochs,
        initial_lr=args.lr,
        halving_period=args.halving_period,
        lam=args.lam,
        batch_size=args.batch_size,
        seed=args.seed,
        clip_grad_norm=args.clip_grad_norm,
        model=model,
    )


def cmd_phantom(args: argparse.Namespace) -> int:
    cfg = PhantomConfig(seed=args.seed, size=args.size, pairs=args.pairs)
    generate_phantom_dataset(cfg, args.out)
    print(args.out / MANIFEST_NAME)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "manifest")
    cfg = _train_config(args, args.channels)
    manifest = load_manifest(args.manifest)
    resume = history = None
    if args.resume is not None:
        resume = load_checkpoint(args.resume, expected_config=cfg.model)
        earlier = args.resume.parent / LOSS_CURVE_NAME
        if earlier.exists():
            history = read_loss_curve(earlier)
    ckpt, curve = train(manifest, cfg, resume=resume, history=history, validate_only=args.validate_only)
    if args.validate_only:
        logger.info("Validated %d pairs; nothing trained", len(manifest))
        return EXIT_OK
    save_checkpoint(ckpt, args.out / CHECKPOINT_NAME)
    write_loss_curve(curve, args.out / LOSS_CURVE_NAME)
    print(args.out / CHECKPOINT_NAME)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    _require(args, "ckpt", "input", "out")
    ckpt = load_checkpoint(args.ckpt)
    if args.channels is not None and args.channels != ckpt.model_config.channels:
        raise ConfigMismatchError(
            f"{args.ckpt} was trained with {ckpt.model_config.channels} channels, requested {args.channels}"
        )
    if args.precision is None:
        set_precision(ckpt.precision)
    elif ckpt.precision != get_precision():
        logger.warning("%s was saved in %s; running in %s as requested", args.ckpt, ckpt.precision, get_precision())
    model = model_from_checkpoint(ckpt)
    image = read_tensor_array(args.input)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"{args.input}: expected a 1×H×W image, got shape {image.shape}")
    output = predict(model, image, args.direction)
    write_tensor_file(Tensor(output), args.out)
    write_scale_record(read_scale_record(args.input), args.out)
    logger.info("Wrote %s output for %s to %s", args.direction, args.input, args.out)
    print(args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "manifest")
    if (args.ckpt is None) == (args.pred_dir is None):
        raise ValidationError("eval: give exactly one of --ckpt or --pred-dir")
    if (args.suv_id is None) != (args.suv_weight is None):
        raise ValidationError("eval: --suv-id and --suv-weight go together")
    suv = SUVParams(args.suv_id, args.suv_weight) if args.suv_id is not None else None
    voi = load_voi_mask(args.voi, args.voxel_volume) if args.voi is not None else None
    options = EvalOptions(
        direction=args.direction,
        ssim_mode=args.ssim_mode,
        mae_eps=args.mae_eps,
        suv=suv,
        voi=voi,
        workers=args.workers,
    )
    manifest = load_manifest(args.manifest)
    model = model_from_checkpoint(load_checkpoint(args.ckpt)) if args.ckpt is not None else None
    report = evaluate_pairs(manifest, model=model, pred_dir=args.pred_dir, options=options)
    write_report(report, args.report)
    print(args.report)
    if not report.succeeded:
        logger.error("Every pair failed; see the warnings above")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_prepare(args: argparse.Namespace) -> int:
    _require(args, "manifest", "out")
    raw = load_manifest(args.manifest)
    out_dir: Path = args.out
    entries = []
    for index, entry in enumerate(raw.entries):
        paths = []
        for role, path in (("source", entry.source), ("target", entry.target)):
            image, scale = preprocess_image(read_tensor_file(path), args.size)
            written = write_tensor_file(image, out_dir / f"{role}_{index:04d}.tcit")
            write_scale_record(scale, written)
            paths.append(written)
        mask = None
        if entry.mask is not None:
            cropped = center_crop(read_tensor_file(entry.mask), args.size)
            mask = write_tensor_file(cropped, out_dir / f"mask_{index:04d}.tcit")
        entries.append(ManifestEntry(paths[0], paths[1], mask))
    manifest_path = write_manifest(DatasetManifest(root=out_dir, entries=entries), out_dir / MANIFEST_NAME)
    print(manifest_path)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    _require(args, "manifest")
    manifest = load_manifest(args.manifest)
    held_out = load_manifest(args.eval_manifest) if args.eval_manifest is not None else manifest
    out_dir: Path = args.out
    rows = []
    for channels in args.channels:
        cfg = _train_config(args, channels)
        logger.info("Ablation run with C=%d", channels)
        ckpt, curve = train(manifest, cfg)
        save_checkpoint(ckpt, out_dir / f"model_c{channels}.ckpt")
        write_loss_curve(curve, out_dir / f"loss_c{channels}.csv")
        report = evaluate_pairs(
            held_out, model=model_from_checkpoint(ckpt), options=EvalOptions(ssim_mode=args.ssim_mode)
        )
        write_report(report, out_dir / f"report_c{channels}.csv")
        rows.append(AblationRow.from_report(channels, report, curve.records[-1].loss_total))
    table = write_ablation_table(rows, out_dir / "ablation.csv")
    print(table)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "prepare": cmd_prepare,
    "ablation": cmd_ablation,
}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse flags, then re-parse with config-file values installed as subcommand defaults."""
    parser, commands = build_parsers()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = commands[args.command]
        sub.set_defaults(**resolve_config(sub, load_config_file(args.config)))
        args = parser.parse_args(argv)
    return args


def run(args: argparse.Namespace) -> int:
    set_precision("float64" if args.precision == "64" else "float32")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (NumericalError, SingularMatrixError) as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (OSError, TensorFileError, ManifestError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_IO


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (None, 0) else EXIT_USAGE
    except ValidationError as exc:
        print(f"tcinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tcinn: error: {exc}", file=sys.stderr)
        return EXIT_IO
    configure_logging(args.verbose)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
