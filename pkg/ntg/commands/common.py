"""Argument groups and loaders shared by the subcommands."""

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ntg.errors import DataError, UsageError
from ntg.featnet import build_extractor, extractor_from_sections
from ntg.formats import read_ntx1, read_pgm
from ntg.matchswap import PATCH_SIZE
from ntg.network import Network

logger = logging.getLogger(__name__)


def add_parser(subparsers, globals_parent, name: str, help_text: str) -> argparse.ArgumentParser:
    return subparsers.add_parser(
        name,
        help=help_text,
        description=help_text,
        parents=[globals_parent],
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )


def add_extractor_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--weights", type=Path, help="NTX1 file with featnet.* sections (default: seeded extractor)")
    parser.add_argument("--levels", type=int, default=3, help="pyramid levels of a seeded extractor")


def add_match_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", type=Path, required=True, help="input PGM")
    parser.add_argument("--ref", type=Path, action="append", required=True, help="reference PGM (repeatable)")
    parser.add_argument("--level", type=int, action="append", dest="match_levels",
                        help="pyramid level to match, 1 = finest (repeatable; default: all)")
    parser.add_argument("--patch-size", type=int, default=PATCH_SIZE, help="patch side k")
    parser.add_argument("--blur-factor", type=int, default=2, help="down/up factor of the blurred reference")
    parser.add_argument("--normalize-input", action="store_true", help="also normalise input patches")
    parser.add_argument("--out", type=Path, required=True, help="output NTX1 file")
    add_extractor_args(parser)


def load_sections(path: Optional[Path]) -> Dict[str, np.ndarray]:
    if path is None:
        return {}
    sections = read_ntx1(path)
    logger.debug("Read %d sections from %s", len(sections), path)
    return sections


def has_prefix(sections: Dict[str, np.ndarray], prefix: str) -> bool:
    head = f"{prefix}."
    return any(name.startswith(head) for name in sections)


def load_extractor(args, sections: Dict[str, np.ndarray]) -> Network:
    if has_prefix(sections, "featnet"):
        return extractor_from_sections(sections)
    if args.weights is not None:
        raise DataError(f"{args.weights} has no featnet sections")
    return build_extractor(args.seed, args.levels)


def read_images(paths: List[Path]) -> List[np.ndarray]:
    return [read_pgm(p) for p in paths]


def check_levels(levels: Optional[List[int]], available: int) -> Optional[List[int]]:
    if levels is None:
        return None
    bad = [ell for ell in levels if not 1 <= ell <= available]
    if bad:
        raise UsageError(f"levels {bad} outside 1..{available}")
    return levels
