from ntg.commands.common import (
    add_match_args,
    add_parser,
    check_levels,
    load_extractor,
    load_sections,
    read_images,
)
from ntg.featnet import level_count
from ntg.formats import read_pgm, write_ntx1
from ntg.matchswap import texture_swaps

NAME = "match"


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        "Match input patches against blurred references; write levelN.index_map and levelN.weight_map.",
    )
    add_match_args(parser)
    return parser


def compute_swaps(args):
    extractor = load_extractor(args, load_sections(args.weights))
    levels = check_levels(args.match_levels, level_count(extractor))
    return texture_swaps(
        extractor,
        read_pgm(args.input),
        read_images(args.ref),
        levels,
        args.blur_factor,
        args.patch_size,
        args.normalize_input,
    )


def run(args) -> int:
    sections = {}
    for result in compute_swaps(args):
        for name, value in result.to_sections().items():
            if not name.endswith(".swapped"):
                sections[name] = value
    write_ntx1(sections, args.out)
    return 0
