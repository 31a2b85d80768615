import dataclasses
import logging
from pathlib import Path

from ntg.commands.common import add_parser
from ntg.config import load_config_file
from ntg.toydata import ToyDomainSpec, load_corpus
from ntg.trainer import MODES, TrainConfig, run_training

logger = logging.getLogger(__name__)

NAME = "train"

# flag dest -> TrainConfig field
OVERRIDES = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr0": "lr0",
    "mode": "mode",
    "lambda_cyc": "lambda_cyc",
    "lambda_tex": "lambda_tex",
    "references": "num_references",
    "steps_per_epoch": "steps_per_epoch",
    "scale": "scale_factor",
}


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        "Cycle-consistent training; writes epoch_NNNN.ntx1 checkpoints, final.ntx1 and metrics.csv.",
    )
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--data", type=Path, help="corpus written by gen-data (default: toy corpus from --seed)")
    parser.add_argument("--epochs", type=int, help="epochs (default 100)")
    parser.add_argument("--batch-size", type=int, help="images per step (default 1)")
    parser.add_argument("--lr0", type=float, help="initial learning rate (default 2e-4)")
    parser.add_argument("--mode", choices=MODES, help="texture mode (default full)")
    parser.add_argument("--lambda-cyc", type=float, help="cycle weight (default 10)")
    parser.add_argument("--lambda-tex", type=float, help="texture weight (default 1e-4)")
    parser.add_argument("--references", type=int, help="reference images per input (default 4)")
    parser.add_argument("--steps-per-epoch", type=int, help="0 = one pass over the X pool (default 0)")
    parser.add_argument("--scale", type=int, choices=(1, 2), help="2: X images are half size and G upsamples (default 1)")
    return parser


def resolve_config(args) -> TrainConfig:
    """Defaults, then the --config file, then explicit flags."""
    config = TrainConfig(seed=args.seed)
    if args.config:
        config = load_config_file(args.config, config)
    flags = {field: getattr(args, dest) for dest, field in OVERRIDES.items() if getattr(args, dest) is not None}
    return dataclasses.replace(config, **flags)


def run(args) -> int:
    config = resolve_config(args)
    corpus = load_corpus(args.data) if args.data else ToyDomainSpec(seed=config.seed, scale_factor=config.scale_factor)
    result = run_training(config, corpus, args.out)
    logger.info("Metrics written to %s", result.metrics_csv)
    return 0
