from pathlib import Path

from ntg.commands.common import add_extractor_args, add_parser, load_extractor, load_sections
from ntg.featnet import extract_pyramid
from ntg.formats import read_pgm, write_ntx1

NAME = "extract"


def register(subparsers, globals_parent):
    parser = add_parser(subparsers, globals_parent, NAME, "Write the feature pyramid of an image as NTX1 sections level1..levelL.")
    parser.add_argument("--input", type=Path, required=True, help="input PGM")
    parser.add_argument("--out", type=Path, required=True, help="output NTX1 file")
    add_extractor_args(parser)
    return parser


def run(args) -> int:
    extractor = load_extractor(args, load_sections(args.weights))
    pyramid = extract_pyramid(extractor, read_pgm(args.input))
    write_ntx1({f"level{ell}": lvl for ell, lvl in enumerate(pyramid.levels, start=1)}, args.out)
    return 0
