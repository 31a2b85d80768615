"""
Finite-difference verification of every loss term on a seeded toy instance.

The instance uses two pyramid levels and narrow networks so that central
differences over a few hundred coordinates per term stay fast.  Swapped
textures are computed once and held fixed, as they are during a training
step.
"""

import argparse
import contextlib
import dataclasses
import sys
from typing import Dict, Hashable, List, Optional, Tuple

import numpy as np

from ntg import autograd as ag
from ntg import losses
from ntg.commands.common import add_parser
from ntg.discriminator import build_discriminator, discriminate
from ntg.errors import NumericError, UsageError
from ntg.featnet import build_extractor, pyramid_on_tape
from ntg.generator import build_generator, generate, generator_on_tape, stage_textures
from ntg.matchswap import texture_swaps
from ntg.network import Network

NAME = "gradcheck"
MAX_SIZE = 16
TOLERANCE = 1e-4
STEP = 1e-5
COORDS_PER_TERM = 300
PLAN = (2, 4)
DISC_WIDTHS = (2, 3, 4)
TERMS = ("tex_G", "tex_F", "adv_D_Y", "adv_D_X", "adv_G", "adv_F", "cyc", "total")


@dataclasses.dataclass
class ToyInstance:
    extractor: Network
    nets: Dict[str, Network]
    x: np.ndarray
    y: np.ndarray
    swaps_x: list
    swaps_y: list
    cycle_swaps_x: list
    cycle_swaps_y: list

    def params(self) -> Dict[Hashable, np.ndarray]:
        params = {(owner, name): value for owner, net in self.nets.items() for name, value in net.params.items()}
        params[("pixels", "x")] = self.x
        params[("pixels", "y")] = self.y
        return params


def build_instance(size: int, seed: int) -> ToyInstance:
    if not 6 <= size <= MAX_SIZE or size % 2:
        raise UsageError(f"--size must be an even number in 6..{MAX_SIZE}, got {size}")
    rng = np.random.default_rng(seed)
    x, y, ref_x, ref_y = (rng.uniform(0.2, 0.8, size=(1, size, size)) for _ in range(4))
    extractor = build_extractor(seed, len(PLAN), PLAN)
    nets = {
        "G": build_generator(seed + 1, len(PLAN), PLAN),
        "F": build_generator(seed + 2, len(PLAN), PLAN),
        "D_X": build_discriminator(seed + 3, widths=DISC_WIDTHS),
        "D_Y": build_discriminator(seed + 4, widths=DISC_WIDTHS),
    }
    levels = list(range(1, len(PLAN) + 1))
    swaps_x = texture_swaps(extractor, x, [ref_y], levels)
    swaps_y = texture_swaps(extractor, y, [ref_x], levels)
    fake_y = generate(nets["G"], x, swaps_x)
    fake_x = generate(nets["F"], y, swaps_y)
    cycle_x = texture_swaps(extractor, fake_y, [ref_x], levels[1:])
    cycle_y = texture_swaps(extractor, fake_x, [ref_y], levels[1:])
    return ToyInstance(extractor, nets, x, y, swaps_x, swaps_y, cycle_x, cycle_y)


def term_losses(inst: ToyInstance, tape: ag.Tape, leaves: Dict[Hashable, ag.Var]) -> Dict[str, ag.Var]:
    def net_params(owner):
        return {name: leaves[(owner, name)] for name in inst.nets[owner].params}

    def translate(owner, image, swaps):
        net = inst.nets[owner]
        return generator_on_tape(net, net_params(owner), image, stage_textures(net, swaps))

    def score(owner, image):
        return discriminate(inst.nets[owner], net_params(owner), image)

    def texture(image, swaps):
        levels = pyramid_on_tape(inst.extractor, inst.extractor.on_tape(tape), image)
        return losses.texture_loss(levels, swaps)

    x, y = leaves[("pixels", "x")], leaves[("pixels", "y")]
    fake_y = translate("G", x, inst.swaps_x)
    fake_x = translate("F", y, inst.swaps_y)
    rec_x = translate("F", fake_y, inst.cycle_swaps_x)
    rec_y = translate("G", fake_x, inst.cycle_swaps_y)

    terms = {
        "tex_G": texture(fake_y, inst.swaps_x),
        "tex_F": texture(fake_x, inst.swaps_y),
        "adv_D_Y": losses.adversarial_loss(score("D_Y", y), score("D_Y", fake_y)),
        "adv_D_X": losses.adversarial_loss(score("D_X", x), score("D_X", fake_x)),
        "adv_G": losses.generator_adversarial_loss(score("D_Y", fake_y)),
        "adv_F": losses.generator_adversarial_loss(score("D_X", fake_x)),
        "cyc": losses.cycle_loss(x, rec_x, y, rec_y),
    }
    terms["total"] = losses.total_objective(
        terms["adv_G"], terms["adv_F"], terms["cyc"], terms["tex_G"], terms["tex_F"]
    )
    return terms


def run_checks(
    size: int = 8,
    seed: int = 0,
    max_coords: Optional[int] = COORDS_PER_TERM,
    terms=TERMS,
) -> List[Tuple[str, ag.FiniteDiffReport]]:
    inst = build_instance(size, seed)
    params = inst.params()
    reports = []
    for term in terms:
        def loss_fn(tape, leaves, term=term):
            return term_losses(inst, tape, leaves)[term]

        reports.append((term, ag.finite_diff_check(loss_fn, params, h=STEP, max_coords=max_coords, seed=seed)))
    return reports


def format_report(reports) -> str:
    lines = ["term,max_rel_error,checked,status"]
    for term, rep in reports:
        status = "ok" if rep.max_rel_error < TOLERANCE else "FAIL"
        lines.append(f"{term},{rep.max_rel_error:.3e},{rep.checked},{status}")
    return "\n".join(lines) + "\n"


def register(subparsers, globals_parent):
    parser = add_parser(
        subparsers, globals_parent, NAME,
        f"Compare analytic and central-difference gradients of every loss term (fails above {TOLERANCE:g}).",
    )
    parser.add_argument("--size", type=int, default=8, help=f"image side, even and at most {MAX_SIZE}")
    parser.add_argument("--coords", type=int, default=COORDS_PER_TERM, help="random coordinates checked per term")
    parser.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def run(args) -> int:
    fault = ag.inject_fault(args.corrupt) if args.corrupt else contextlib.nullcontext()
    with fault:
        reports = run_checks(args.size, args.seed, args.coords)
    sys.stdout.write(format_report(reports))
    failed = [(term, rep) for term, rep in reports if rep.max_rel_error >= TOLERANCE]
    if failed:
        term, rep = failed[0]
        raise NumericError(term, f"gradient check failed, max relative error {rep.max_rel_error:.3e} at {rep.worst}")
    return 0
