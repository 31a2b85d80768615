# -*- coding: utf-8 -*-
"""Texture-mode ablation on the toy corpus.

Trains every mode (no_texture, single_scale_texture, full) for each seed and
prints mean validation PSNR / SSIM / MSE per run plus per-mode means:

  python scripts/run_ablation.py --out runs/ablation
  python scripts/run_ablation.py --out runs/quick --epochs 2 --seeds 0 --steps-per-epoch 4
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

BASE = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(BASE))

from ntg.config import LOG_FORMAT, LOG_LEVEL  # noqa: E402
from ntg.metrics import build_report, csv_text, fmt  # noqa: E402
from ntg.toydata import ToyDomainSpec, generate_corpus  # noqa: E402
from ntg.trainer import TrainConfig, run_training, validation_rows  # noqa: E402

logger = logging.getLogger("run_ablation")

ABLATION_ORDER = ("no_texture", "single_scale_texture", "full")


def run_mode(mode: str, seed: int, args, corpus) -> dict:
    config = dataclasses.replace(
        TrainConfig(seed=seed, mode=mode, epochs=args.epochs),
        steps_per_epoch=args.steps_per_epoch,
    )
    result = run_training(config, corpus, args.out / f"{mode}_seed{seed}")
    report = build_report(validation_rows(result.state, config, corpus, result.val_refs))
    return {"mode": mode, "seed": seed, **{m: report.summary[m].mean for m in ("psnr", "ssim", "mse")}}


def main(args) -> int:
    rows = []
    for seed in args.seeds:
        corpus = generate_corpus(ToyDomainSpec(seed=seed))
        for mode in ABLATION_ORDER:
            logger.info("Training mode=%s seed=%d", mode, seed)
            rows.append(run_mode(mode, seed, args, corpus))

    lines = [["mode", "seed", "psnr", "ssim", "mse"]]
    lines += [[r["mode"], str(r["seed"]), fmt(r["psnr"]), fmt(r["ssim"]), fmt(r["mse"])] for r in rows]
    for mode in ABLATION_ORDER:
        subset = [r for r in rows if r["mode"] == mode]
        lines.append([mode, "mean"] + [fmt(float(np.mean([r[m] for r in subset]))) for m in ("psnr", "ssim", "mse")])
    table = csv_text(lines)
    sys.stdout.write(table)
    (args.out / "ablation.csv").write_text(table, encoding="utf-8")
    return 0


def parse_args():
    parser = argparse.ArgumentParser(description="Compare texture modes on the toy corpus.")
    parser.add_argument("--out", type=Path, required=True, help="directory for per-run outputs and ablation.csv")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="training seeds")
    parser.add_argument("--epochs", type=int, default=100, help="epochs per run")
    parser.add_argument("--steps-per-epoch", type=int, default=0, help="0 = one pass over the X pool")
    return parser.parse_args()


if __name__ == "__main__":
    logging.basicConfig(format=LOG_FORMAT, level=LOG_LEVEL)
    arguments = parse_args()
    arguments.out.mkdir(parents=True, exist_ok=True)
    sys.exit(main(arguments))
