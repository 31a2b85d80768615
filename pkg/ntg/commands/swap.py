from ntg.commands.common import add_match_args, add_parser
from ntg.commands.match import compute_swaps
from ntg.formats import write_ntx1

NAME = "swap"


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        "Swap in raw-reference feature patches; write levelN.swapped, weight_map and index_map.",
    )
    add_match_args(parser)
    return parser


def run(args) -> int:
    sections = {}
    for result in compute_swaps(args):
        sections.update(result.to_sections())
    write_ntx1(sections, args.out)
    return 0
