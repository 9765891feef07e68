#!/usr/bin/env python3
"""Run the long desk-scale acceptance checks that the test suite marks slow.

Eats our own dogfood: builds datasets, trains and scores models through the
same ``airnet`` modules the CLI uses. Each check prints its numbers and a
PASS/FAIL line; the exit code is the number of failed checks.

Checks:

* ``overfit``: a d=64, M=16 model trained 2000 steps on one sparse torus
  reaches train BCE < 0.05 and IoU >= 0.95 against the analytic shape.
* ``generalize``: train on 200 random shapes, score 20 held-out ones; mean
  IoU >= 0.85, NC >= 0.90, F-score >= 0.85.
* ``ablate``: equal-budget variants keep the expected ordering (attentive
  decoder over interpolation, full attention over none, attentive set
  abstraction not worse than maxpool).

Usage::

    .venv/bin/python scripts/verify-desk-scale.py overfit
    .venv/bin/python scripts/verify-desk-scale.py generalize --epochs 200 --out runs/desk
    .venv/bin/python scripts/verify-desk-scale.py ablate --shapes 100
"""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path
import sys
import time

# Run-from-anywhere: make the repo importable without an install step.
REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT))

from airnet.cli import Variant, setup_logging  # noqa: E402
from airnet.config import worker_count  # noqa: E402
from airnet.const import DEFAULT_INPUT_POINTS, REGIME_NEAR_SURFACE  # noqa: E402
from airnet.extraction.reconstruct import (  # noqa: E402
    ExtractionConfig,
    reconstruct,
    reconstruct_shape,
)
from airnet.metrics import EvalReport, evaluate_shape, format_metrics_table, iou  # noqa: E402
from airnet.model.encoder import EncoderConfig  # noqa: E402
from airnet.model.network import AirNet, ModelConfig  # noqa: E402
from airnet.rng import RngStream  # noqa: E402
from airnet.synthdata.dataset import ShapeRecord, make_dataset  # noqa: E402
from airnet.synthdata.sampling import sample_supervision, sample_surface  # noqa: E402
from airnet.synthdata.shapes import torus  # noqa: E402
from airnet.training import TrainConfig, fit  # noqa: E402

SMALL_ENCODER = EncoderConfig(feature_dim=64, num_anchors=16)


def _verdict(name: str, ok: bool, started: float) -> bool:
    print(f"{name}: {'PASS' if ok else 'FAIL'} ({time.monotonic() - started:.0f}s)")
    return ok


def _score(model: AirNet, records, extraction: ExtractionConfig, seed: int) -> EvalReport:
    report = EvalReport(iou_samples=100_000, surface_samples=100_000, seed=seed)
    workers = worker_count()
    for record in records:
        report.rows.append(
            evaluate_shape(
                record.name,
                reconstruct(model, record.cloud, extraction, workers),
                reconstruct_shape(record.shape, extraction),
                model.occupancy_function(record.cloud.points, workers),
                record.shape.occupancy,
                seed=seed,
            )
        )
    return report


def check_overfit(args: argparse.Namespace) -> bool:
    started = time.monotonic()
    stream = RngStream(args.seed).split("overfit")
    shape = torus(0.25, 0.1)
    record = ShapeRecord(
        0,
        shape,
        sample_surface(shape, DEFAULT_INPUT_POINTS, 0.0, stream.split("input")),
        sample_supervision(shape, 5000, REGIME_NEAR_SURFACE, stream.split("supervision")),
    )
    model = AirNet.create(ModelConfig(encoder=SMALL_ENCODER), args.seed)
    config = TrainConfig(
        batch_size=1, points_per_shape=1024, epochs=args.steps, patience=args.steps, seed=args.seed
    )
    result = fit([record], model, config, args.out)
    train_loss = min(entry.train_loss for entry in result.log[-20:])
    volume = iou(model.occupancy_function(record.cloud.points), shape.occupancy, seed=args.seed)
    print(f"overfit: train_bce={train_loss:.4f} iou={volume:.4f}")
    return _verdict("overfit", train_loss < 0.05 and volume >= 0.95, started)


def _desk_split(args: argparse.Namespace):
    dataset = make_dataset(
        args.shapes + args.held_out, args.seed, REGIME_NEAR_SURFACE, workers=worker_count()
    )
    return dataset.records[: args.shapes], dataset.records[args.shapes :]


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)


def check_generalize(args: argparse.Namespace) -> bool:
    started = time.monotonic()
    train, held_out = _desk_split(args)
    model = AirNet.create(ModelConfig(encoder=SMALL_ENCODER), args.seed)
    fit(train, model, _train_config(args), args.out)
    report = _score(model, held_out, ExtractionConfig(), args.seed)
    print(report.format_table())
    mean = report.mean()
    ok = mean.iou >= 0.85 and mean.normal_consistency >= 0.90 and mean.f_score >= 0.85
    return _verdict("generalize", ok, started)


def check_ablate(args: argparse.Namespace) -> bool:
    started = time.monotonic()
    train, held_out = _desk_split(args)
    names = ("ours:3full:ours", "ours:3full:interp", "ours::ours", "PT:3full:ours")
    means = {}
    for name in names:
        variant = Variant.parse(name)
        encoder = replace(
            SMALL_ENCODER,
            family=variant.family,
            full_attention_layers=variant.full_attention_layers,
        )
        config = ModelConfig(encoder=encoder)
        config = replace(config, decoder=replace(config.decoder, kind=variant.decoder))
        model = AirNet.create(config, args.seed)
        out = Path(args.out) / variant.slug if args.out else None
        fit(train, model, _train_config(args), out)
        means[name] = _score(model, held_out, ExtractionConfig(), args.seed).mean(name)
    print(format_metrics_table(list(means.values()), label="variant"))
    full = means["ours:3full:ours"].iou
    ok = (
        full - means["ours:3full:interp"].iou >= 0.03
        and full - means["ours::ours"].iou >= 0.02
        and full >= means["PT:3full:ours"].iou - 0.005
    )
    return _verdict("ablate", ok, started)


CHECKS = {"overfit": check_overfit, "generalize": check_generalize, "ablate": check_ablate}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("checks", nargs="+", choices=sorted(CHECKS), help="Checks to run, in order.")
    parser.add_argument("--seed", type=int, default=0, help="Experiment seed (default: 0).")
    parser.add_argument("--out", help="Keep logs and checkpoints under this directory.")
    parser.add_argument(
        "--steps", type=int, default=2000, help="Overfit training steps (default: 2000)."
    )
    parser.add_argument(
        "--shapes", type=int, default=200, help="Training shapes for generalize/ablate (default: 200)."
    )
    parser.add_argument(
        "--held-out", type=int, default=20, help="Held-out shapes to score (default: 20)."
    )
    parser.add_argument("--epochs", type=int, default=400, help="Training epochs (default: 400).")
    parser.add_argument("--batch-size", type=int, default=16, help="Shapes per step (default: 16).")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging.")
    args = parser.parse_args()
    setup_logging(args.verbose)

    failures = 0
    for name in args.checks:
        check_args = args
        if args.out:
            check_args = argparse.Namespace(**{**vars(args), "out": str(Path(args.out) / name)})
        failures += not CHECKS[name](check_args)
    return failures


if __name__ == "__main__":
    sys.exit(main())
