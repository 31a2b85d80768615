import logging
import sys
from pathlib import Path

from ntg.commands.common import add_parser
from ntg.errors import DataError
from ntg.formats import atomic_write_bytes, read_pgm
from ntg.metrics import build_report, evaluate_pair, histogram_csv, report_csv, write_report

logger = logging.getLogger(__name__)

NAME = "eval"


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        "SSIM, MSE, PSNR and histogram correlation for every output/target PGM pair with the same file name.",
    )
    parser.add_argument("--outputs", type=Path, required=True, help="directory of generated PGMs")
    parser.add_argument("--targets", type=Path, required=True, help="directory of ground-truth PGMs")
    parser.add_argument("--out", type=Path, help="CSV report path (default: standard output)")
    parser.add_argument("--histograms", type=Path, help="also write 256-bin intensity histograms (id,bin,count)")
    return parser


def run(args) -> int:
    outputs = {p.name: p for p in sorted(args.outputs.glob("*.pgm"))}
    targets = {p.name: p for p in sorted(args.targets.glob("*.pgm"))}
    names = sorted(outputs.keys() & targets.keys())
    if not names:
        raise DataError(f"no PGM file names shared by {args.outputs} and {args.targets}")
    missing = sorted(outputs.keys() ^ targets.keys())
    if missing:
        logger.warning("Skipping %d unpaired files, e.g. %s", len(missing), missing[0])

    rows, images = [], {}
    for name in names:
        output, target = read_pgm(outputs[name]), read_pgm(targets[name])
        stem = Path(name).stem
        rows.append(evaluate_pair(stem, output, target))
        images[f"{stem}/output"], images[f"{stem}/target"] = output, target

    report = build_report(rows)
    if args.out is not None:
        write_report(report, args.out)
    else:
        sys.stdout.write(report_csv(report))
    if args.histograms is not None:
        atomic_write_bytes(args.histograms, histogram_csv(images).encode("utf-8"))
    return 0
