"""Command-line entry point: ``python -m airnet <command> ...``.

Commands::

    gen-data     write a synthetic dataset
    train        fit a model on a dataset
    reconstruct  turn point clouds into OBJ meshes with a trained model
    eval         score reconstructions against the analytic shapes
    ablate       train and score several model variants on equal budgets
    gradcheck    compare tape gradients with finite differences on a tiny model

Every command accepts ``--config FILE`` (flat ``key=value``), ``--seed``,
``--out DIR``, ``--force`` and ``--verbose``; flags win over the file, and the
effective configuration is written to ``DIR/config.txt``. Exit codes: 0 on
success, 1 on usage or input errors, 2 on numeric failures.
"""

from __future__ import annotations

import argparse
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
import logging
from pathlib import Path
import sys

import colorlog
import numpy as np

from .config import (
    CONF_DATA_NOISE,
    CONF_DATA_REGIME,
    RunConfig,
    read_config_file,
    resolve_config,
    worker_count,
    write_effective_config,
)
from .const import (
    DATASET_MANIFEST,
    DATASET_PRESETS,
    DECODER_KINDS,
    ENCODER_FAMILIES,
    ENCODER_FAMILY_POINTNET,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    INPUT_FILE,
    MESH_TEMPLATE,
    REGIME_NEAR_SURFACE,
    REGIMES,
    REPORT_FILE,
    VERSION,
)
from .engine.gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, check_model
from .errors import (
    AirNetError,
    ConfigError,
    DataFormatError,
    DegenerateShapeError,
    NumericError,
    ShapeMismatchError,
)
from .extraction.mesh import TriangleMesh, read_obj, write_obj
from .extraction.reconstruct import ExtractionConfig, reconstruct, reconstruct_shape
from .geometry.pointcloud_io import PointCloud, read_point_cloud
from .metrics import (
    EvalReport,
    ShapeMetrics,
    evaluate_shape,
    format_metrics_table,
    mesh_occupancy,
)
from .model.decoder import DecoderConfig
from .model.encoder import EncoderConfig
from .model.network import AirNet, ModelConfig
from .rng import RngStream
from .synthdata.dataset import ShapeRecord, make_dataset, read_dataset, read_manifest, write_dataset
from .synthdata.sampling import random_shape, sample_supervision, sample_surface
from .training import TrainConfig, fit, split_dataset

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s"

# Model used by ``gradcheck``: small enough for exhaustive finite differences.
GRADCHECK_POINTS = 24
GRADCHECK_QUERIES = 16
GRADCHECK_SHAPES = 2
GRADCHECK_ENCODER = EncoderConfig(
    feature_dim=8, num_anchors=4, downsampling_layers=1, full_attention_layers=1, k_enc=4
)
GRADCHECK_DECODER = DecoderConfig(k_dec=3, width=16, head_layers=2, head_hidden=16)

DEFAULT_VARIANTS = ("ours:3full:ours", "ours::ours", "ours:3full:interp", "PT:3full:ours")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def setup_logging(verbose: bool = False) -> None:
    """Send ``airnet`` logs to stderr through a single colored handler."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    logger = logging.getLogger("airnet")
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


# --- Shared plumbing -------------------------------------------------------


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"--out {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _overrides(args: argparse.Namespace) -> dict[str, object]:
    """Flags whose destination is a config key (dotted) or the seed."""
    values = {key: value for key, value in vars(args).items() if "." in key and value is not None}
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def _run_config(args: argparse.Namespace, extra: dict[str, object] | None = None) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    cli_values = {**(extra or {}), **_overrides(args)}
    paths = {
        name: Path(value)
        for name in ("out", "data", "eval_data", "checkpoint", "init_checkpoint", "input", "meshes")
        if (value := getattr(args, name, None)) is not None
    }
    return RunConfig(args.command, resolve_config(file_values, cli_values), paths)


def _model_config(run: RunConfig) -> ModelConfig:
    return ModelConfig.from_mapping({key: str(value) for key, value in run.values.items()})


def _train_config(run: RunConfig) -> TrainConfig:
    return TrainConfig.from_section(run.section("train"), seed=run.seed)


def _extraction_config(run: RunConfig) -> ExtractionConfig:
    return ExtractionConfig.from_section(run.section("extract"))


def _load_model(path: Path) -> AirNet:
    model = AirNet.from_checkpoint(path)
    _LOGGER.info("Loaded model from %s", path)
    return model


# --- gen-data --------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    preset = {}
    if args.preset:
        chosen = DATASET_PRESETS[args.preset]
        preset = {CONF_DATA_REGIME: chosen["regime"], CONF_DATA_NOISE: chosen["noise_sigma"]}
    run = _run_config(args, preset)
    out = _prepare_out(Path(args.out), args.force)
    data = run.section("data")
    dataset = make_dataset(
        data["count"],
        run.seed,
        regime=data["regime"],
        noise_sigma=data["noise_sigma"],
        n_points=data["points"],
        n_supervision=data["supervision_points"],
        workers=worker_count(),
    )
    write_dataset(out, dataset)
    write_effective_config(out, run.echo())
    print(f"wrote {len(dataset)} shapes to {out}")
    return EXIT_OK


# --- train -----------------------------------------------------------------


def _train(run: RunConfig, records: Sequence[ShapeRecord], out: Path, model: AirNet | None = None):
    model = model or AirNet.create(_model_config(run), run.seed)
    result = fit(records, model, _train_config(run), out)
    return model, result


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    dataset = read_dataset(args.data)
    out = _prepare_out(Path(args.out), args.force)
    echo = run.echo()
    model = None
    if args.init_checkpoint:
        # The checkpoint fixes the architecture; model flags do not apply.
        model = _load_model(Path(args.init_checkpoint))
        echo.update(model.config.to_mapping())
    write_effective_config(out, echo)
    _, result = _train(run, dataset.records, out, model)
    best = "-" if result.best_val_loss is None else f"{result.best_val_loss:.6f}"
    print(f"epochs={len(result.log)} best_epoch={result.best_epoch} best_val_loss={best}")
    return EXIT_OK


# --- reconstruct -----------------------------------------------------------


def _input_clouds(path: Path) -> list[tuple[str, PointCloud]]:
    if path.is_dir():
        manifest = read_manifest(path)
        return [(name, read_point_cloud(path / name / INPUT_FILE)) for name in manifest["shapes"]]
    return [(path.stem, read_point_cloud(path))]


def cmd_reconstruct(args: argparse.Namespace) -> int:
    run = _run_config(args)
    model = _load_model(Path(args.checkpoint))
    inputs = _input_clouds(Path(args.input))
    out = _prepare_out(Path(args.out), args.force)
    write_effective_config(out, run.echo())
    config = _extraction_config(run)
    workers = worker_count()
    for name, cloud in inputs:
        mesh = reconstruct(model, cloud, config, workers)
        target = out / MESH_TEMPLATE.format(name=name)
        write_obj(target, mesh)
        print(f"{name}: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces -> {target}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------


@dataclass
class _Prediction:
    mesh: TriangleMesh
    occupancy: Callable[[np.ndarray], np.ndarray]


def _predictions(args: argparse.Namespace, records: Sequence[ShapeRecord], config: ExtractionConfig):
    if args.source == "gt":
        for record in records:
            yield _Prediction(reconstruct_shape(record.shape, config), record.shape.occupancy)
    elif args.source == "model":
        if not args.checkpoint:
            raise ConfigError("--source model needs --checkpoint")
        model = _load_model(Path(args.checkpoint))
        workers = worker_count()
        for record in records:
            occupancy = model.occupancy_function(record.cloud.points, workers)
            yield _Prediction(reconstruct(model, record.cloud, config, workers), occupancy)
    else:
        if not args.meshes:
            raise ConfigError("--source meshes needs --meshes DIR")
        meshes_dir = Path(args.meshes)
        found = sorted(meshes_dir.glob(MESH_TEMPLATE.format(name="*")))
        if len(found) != len(records):
            raise DataFormatError(
                f"{meshes_dir} holds {len(found)} meshes for {len(records)} shapes"
            )
        pitch = 1.0 / config.final_resolution
        for record in records:
            mesh = read_obj(meshes_dir / MESH_TEMPLATE.format(name=record.name))
            yield _Prediction(mesh, mesh_occupancy(mesh, pitch))


def evaluate_records(
    records: Sequence[ShapeRecord],
    predictions,
    run: RunConfig,
    config: ExtractionConfig,
) -> EvalReport:
    settings = run.section("eval")
    report = EvalReport(
        iou_samples=settings["iou_samples"],
        surface_samples=settings["surface_samples"],
        f_score_threshold=settings["f_score_threshold"],
        seed=run.seed,
    )
    for record, prediction in zip(records, predictions, strict=True):
        row = evaluate_shape(
            record.name,
            prediction.mesh,
            reconstruct_shape(record.shape, config),
            prediction.occupancy,
            record.shape.occupancy,
            iou_samples=report.iou_samples,
            surface_samples=report.surface_samples,
            f_score_threshold=report.f_score_threshold,
            seed=run.seed,
        )
        _LOGGER.info("%s: IoU %.4f, F-score %.4f", row.name, row.iou, row.f_score)
        report.rows.append(row)
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    run = _run_config(args)
    records = read_dataset(args.data).records
    out = _prepare_out(Path(args.out), args.force)
    write_effective_config(out, run.echo())
    config = _extraction_config(run)
    report = evaluate_records(records, _predictions(args, records, config), run, config)
    (out / REPORT_FILE).write_text(report.to_kv(), encoding="utf-8")
    print(report.format_table())
    return EXIT_OK


# --- ablate ----------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """A model variant named ``encoder:full:decoder``, e.g. ``ours:3full:interp``."""

    family: str
    full_attention_layers: int
    decoder: str

    @classmethod
    def parse(cls, name: str) -> Variant:
        parts = name.split(":")
        if len(parts) != 3:
            raise ConfigError(f"variant {name!r} is not of the form encoder:full:decoder")
        family, full, decoder = parts
        if family not in ENCODER_FAMILIES:
            raise ConfigError(f"variant {name!r}: unknown encoder {family!r}")
        if decoder not in DECODER_KINDS:
            raise ConfigError(f"variant {name!r}: unknown decoder {decoder!r}")
        if full == "":
            layers = 0
        elif full.endswith("full") and full[:-4].isdigit():
            layers = int(full[:-4])
        else:
            raise ConfigError(f"variant {name!r}: middle part must be empty or <n>full")
        return cls(family, layers, decoder)

    @property
    def name(self) -> str:
        full = f"{self.full_attention_layers}full" if self.full_attention_layers else ""
        return f"{self.family}:{full}:{self.decoder}"

    @property
    def slug(self) -> str:
        return self.name.replace(":", "-")

    def apply(self, values: dict[str, object]) -> dict[str, object]:
        return {
            **values,
            "encoder.family": self.family,
            "encoder.full_attention_layers": self.full_attention_layers,
            "decoder.kind": self.decoder,
        }


def cmd_ablate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    variants = [Variant.parse(name.strip()) for name in (args.variants or ",".join(DEFAULT_VARIANTS)).split(",")]
    records = read_dataset(args.data).records
    if args.eval_data:
        eval_records = read_dataset(args.eval_data).records
    else:
        _, val = split_dataset(records)
        eval_records = [records[i] for i in val]
    out = _prepare_out(Path(args.out), args.force)
    write_effective_config(out, run.echo())
    config = _extraction_config(run)

    rows: list[ShapeMetrics] = []
    lines = []
    for variant in variants:
        variant_run = RunConfig(run.command, variant.apply(run.values), run.paths)
        variant_dir = out / variant.slug
        variant_dir.mkdir(parents=True, exist_ok=True)
        write_effective_config(variant_dir, variant_run.echo())
        _LOGGER.info("Training variant %s", variant.name)
        model, _ = _train(variant_run, records, variant_dir)
        predictions = (
            _Prediction(
                reconstruct(model, record.cloud, config),
                model.occupancy_function(record.cloud.points),
            )
            for record in eval_records
        )
        report = evaluate_records(eval_records, predictions, variant_run, config)
        (variant_dir / REPORT_FILE).write_text(report.to_kv(), encoding="utf-8")
        mean = report.mean(variant.name)
        rows.append(mean)
        lines += [
            f"{variant.name}.iou={mean.iou:.6f}",
            f"{variant.name}.chamfer_l1={mean.chamfer_l1:.6f}",
            f"{variant.name}.normal_consistency={mean.normal_consistency:.6f}",
            f"{variant.name}.f_score={mean.f_score:.6f}",
        ]
    (out / REPORT_FILE).write_text("\n".join([f"seed={run.seed}", *lines]) + "\n", encoding="utf-8")
    print(format_metrics_table(rows, label="variant"))
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------


def gradcheck_batch(seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A fixed tiny batch: surface points, near-surface queries and their labels."""
    stream = RngStream(seed).split("gradcheck")
    points, queries, labels = [], [], []
    for index in range(GRADCHECK_SHAPES):
        shape_stream = stream.split(index)
        shape = random_shape(shape_stream.split("shape"))
        points.append(sample_surface(shape, GRADCHECK_POINTS, 0.0, shape_stream.split("input")).points)
        samples = sample_supervision(
            shape, GRADCHECK_QUERIES, REGIME_NEAR_SURFACE, shape_stream.split("supervision")
        )
        queries.append(samples.points)
        labels.append(samples.labels)
    return np.stack(points), np.stack(queries), np.stack(labels)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if args.out:
        write_effective_config(_prepare_out(Path(args.out), args.force), run.echo())
    full_layers = 0 if args.family == ENCODER_FAMILY_POINTNET else GRADCHECK_ENCODER.full_attention_layers
    config = ModelConfig(
        replace(GRADCHECK_ENCODER, family=args.family, full_attention_layers=full_layers),
        replace(GRADCHECK_DECODER, kind=args.decoder_kind),
        "float64",
    )
    model = AirNet.create(config, run.seed)
    points, queries, labels = gradcheck_batch(run.seed)
    report = check_model(
        model,
        points,
        queries,
        labels,
        step=args.step,
        tolerance=args.tolerance,
        max_entries=args.max_entries,
        seed=run.seed,
    )
    print(report.format())
    if not report.passed:
        names = ", ".join(group.name for group in report.failures())
        raise NumericError(f"gradient check failed for {names}")
    return EXIT_OK


# --- Parser ----------------------------------------------------------------


def _common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--out", required=out_required, help="output directory")
    parser.add_argument("--force", action="store_true", help="write into a non-empty --out")
    parser.add_argument("--seed", type=int, help="experiment seed")
    parser.add_argument("--config", help="key=value config file; flags take precedence")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--feature-dim", dest="encoder.feature_dim", type=int)
    parser.add_argument("--num-anchors", dest="encoder.num_anchors", type=int)
    parser.add_argument("--downsampling-layers", dest="encoder.downsampling_layers", type=int)
    parser.add_argument("--full-attention-layers", dest="encoder.full_attention_layers", type=int)
    parser.add_argument("--k-enc", dest="encoder.k_enc", type=int)
    parser.add_argument("--encoder-family", dest="encoder.family", choices=ENCODER_FAMILIES)
    parser.add_argument("--k-dec", dest="decoder.k_dec", type=int)
    parser.add_argument("--decoder-width", dest="decoder.width", type=int)
    parser.add_argument("--decoder-kind", dest="decoder.kind", choices=DECODER_KINDS)
    parser.add_argument("--dtype", dest="model.dtype", choices=("float32", "float64"))


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", dest="train.epochs", type=int)
    parser.add_argument("--batch-size", dest="train.batch_size", type=int)
    parser.add_argument("--lr", dest="train.lr", type=float)
    parser.add_argument("--points-per-shape", dest="train.points_per_shape", type=int)
    parser.add_argument("--eval-every", dest="train.eval_every", type=int)
    parser.add_argument("--patience", dest="train.patience", type=int)


def _extract_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--res0", dest="extract.res0", type=int)
    parser.add_argument("--upsample", dest="extract.upsampling_steps", type=int)
    parser.add_argument("--threshold", dest="extract.threshold", type=float)


def _eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iou-samples", dest="eval.iou_samples", type=int)
    parser.add_argument("--surface-samples", dest="eval.surface_samples", type=int)
    parser.add_argument("--f-score-threshold", dest="eval.f_score_threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="airnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="write a synthetic dataset")
    _common(gen)
    gen.add_argument("--count", dest="data.count", type=int)
    gen.add_argument("--regime", dest="data.regime", choices=REGIMES)
    gen.add_argument("--noise-sigma", dest="data.noise_sigma", type=float)
    gen.add_argument("--points", dest="data.points", type=int)
    gen.add_argument("--supervision-points", dest="data.supervision_points", type=int)
    gen.add_argument("--preset", choices=sorted(DATASET_PRESETS), help="A: near-surface, clean; B: uniform, noisy")
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="fit a model on a dataset")
    _common(train)
    train.add_argument("--data", required=True, help=f"dataset directory with {DATASET_MANIFEST}")
    train.add_argument("--init-checkpoint", help="start from these parameters")
    _model_flags(train)
    _train_flags(train)
    train.set_defaults(handler=cmd_train)

    rec = commands.add_parser("reconstruct", help="point clouds to OBJ meshes")
    _common(rec)
    rec.add_argument("--checkpoint", required=True)
    rec.add_argument("--input", required=True, help="point-cloud file or dataset directory")
    _extract_flags(rec)
    rec.set_defaults(handler=cmd_reconstruct)

    ev = commands.add_parser("eval", help="score reconstructions against analytic shapes")
    _common(ev)
    ev.add_argument("--data", required=True)
    ev.add_argument("--source", choices=("model", "meshes", "gt"), default="model")
    ev.add_argument("--checkpoint")
    ev.add_argument("--meshes", help="directory of <shape>.obj files")
    _extract_flags(ev)
    _eval_flags(ev)
    ev.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="compare model variants on equal budgets")
    _common(ablate)
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--eval-data", help="held-out dataset (default: the validation split)")
    ablate.add_argument("--variants", help="comma-separated encoder:full:decoder names")
    _model_flags(ablate)
    _train_flags(ablate)
    _extract_flags(ablate)
    _eval_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate)

    grad = commands.add_parser("gradcheck", help="finite-difference gradient check")
    _common(grad, out_required=False)
    grad.add_argument("--family", choices=ENCODER_FAMILIES, default=ENCODER_FAMILIES[0])
    grad.add_argument("--decoder-kind", choices=DECODER_KINDS, default=DECODER_KINDS[0])
    grad.add_argument("--step", type=float, default=DEFAULT_STEP)
    grad.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    grad.add_argument("--max-entries", type=int, help="check at most this many entries per tensor")
    grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as err:
        print(f"airnet: {err}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except NumericError as err:
        _LOGGER.error("%s", err)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, ShapeMismatchError, DegenerateShapeError) as err:
        _LOGGER.error("%s", err)
        return EXIT_USAGE
    except AirNetError:
        _LOGGER.exception("Unexpected failure")
        return EXIT_USAGE
