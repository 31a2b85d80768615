import sys
from pathlib import Path

from ntg.commands.common import add_parser, has_prefix, load_sections, read_images
from ntg.errors import DataError, UsageError
from ntg.featnet import extractor_from_sections
from ntg.formats import read_pgm, write_pgm
from ntg.generator import generate, generate_without_texture, generator_from_sections, stage_levels
from ntg.grid import bicubic_resample
from ntg.matchswap import texture_swaps
from ntg.metrics import csv_text, evaluate_pair, row_fields

NAME = "synthesize"
MODES = ("full", "single", "none", "bicubic")


def register(subparsers, globals_parent):
    parser = add_parser(subparsers, globals_parent, NAME, "Translate one image with a trained generator.")
    parser.add_argument("--input", type=Path, required=True, help="input PGM")
    parser.add_argument("--ref", type=Path, action="append", default=[], help="reference PGM (repeatable)")
    parser.add_argument("--weights", type=Path, help="NTX1 file with featnet.* and generator sections")
    parser.add_argument("--generator", default="G", help="section prefix of the generator to run")
    parser.add_argument("--mode", choices=MODES, default="full",
                        help="full: multi-scale textures from --ref. single and none run with zero stage textures "
                             "and need no --ref; single differs from none only at training time. "
                             "bicubic: resampling baseline")
    parser.add_argument("--scale", type=int, choices=(1, 2), default=1, help="output/input size ratio")
    parser.add_argument("--blur-factor", type=int, default=2, help="down/up factor of the blurred reference")
    parser.add_argument("--normalize-input", action="store_true", help="also normalise input patches")
    parser.add_argument("--out", type=Path, required=True, help="output PGM")
    parser.add_argument("--target", type=Path, help="ground-truth PGM; prints an eval CSV row to stdout")
    return parser


def _translate(args, image):
    if args.weights is None:
        raise UsageError(f"--weights is required in mode {args.mode}")
    if args.mode == "full" and not args.ref:
        raise UsageError(f"--ref is required in mode {args.mode}")
    sections = load_sections(args.weights)
    for prefix in ("featnet", args.generator):
        if not has_prefix(sections, prefix):
            raise DataError(f"{args.weights} has no {prefix}.* sections")
    extractor = extractor_from_sections(sections)
    net = generator_from_sections(sections, args.generator)

    native = net.meta["scale_factor"][0]
    if native == args.scale:
        source = image
    elif native == 1 and args.scale == 2:
        source = bicubic_resample(image, 2)
    else:
        raise DataError(f"generator '{args.generator}' upsamples by {native}, cannot produce scale {args.scale}")

    if args.mode != "full":
        return generate_without_texture(net, source)
    swaps = texture_swaps(
        extractor, source, read_images(args.ref), stage_levels(net), args.blur_factor,
        normalize_input=args.normalize_input,
    )
    return generate(net, source, swaps)


def run(args) -> int:
    image = read_pgm(args.input)
    if args.mode == "bicubic":
        out = image.copy() if args.scale == 1 else bicubic_resample(image, 2)
    else:
        out = _translate(args, image)
    write_pgm(out, args.out)
    if args.target is not None:
        row = evaluate_pair(args.input.stem, out, read_pgm(args.target))
        sys.stdout.write(csv_text([row_fields(row)]))
    return 0
