from pathlib import Path

from ntg.commands.common import add_parser
from ntg.errors import UsageError
from ntg.toydata import ToyDomainSpec, generate_corpus, write_corpus

NAME = "gen-data"


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        "Write the seeded toy corpus as X/train, Y/train and pairs/val PGMs plus manifest.csv.",
    )
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--size", type=int, default=32, help="image side in pixels")
    parser.add_argument("--train", type=int, default=64, help="training images per domain")
    parser.add_argument("--val", type=int, default=16, help="validation pairs")
    parser.add_argument("--scale", type=int, choices=(1, 2), default=1, help="2: X images are bicubic-downscaled to half size")
    return parser


def run(args) -> int:
    try:
        spec = ToyDomainSpec(
            image_size=args.size, train_per_domain=args.train, val_pairs=args.val, seed=args.seed,
            scale_factor=args.scale,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    write_corpus(generate_corpus(spec), args.out)
    return 0
