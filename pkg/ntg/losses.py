"""
Objective terms: Gram texture loss, adversarial losses, cycle consistency and
the combined objective.

Every function accepts `Var`s or plain arrays and returns a scalar `Var`;
``float(result)`` gives the value, and the result is differentiable when any
argument lives on a tape.
"""

import dataclasses
import logging
from typing import List, Sequence, Tuple, Union

import numpy as np

from ntg import autograd as ag
from ntg.errors import ShapeMismatchError
from ntg.featnet import FeaturePyramid, pyramid_on_tape
from ntg.grid import as_grid
from ntg.matchswap import SwapResult
from ntg.network import Network
from ntg.optim import Adam

logger = logging.getLogger(__name__)

Levels = Union[FeaturePyramid, Sequence[Union[ag.Var, np.ndarray]]]


@dataclasses.dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_tex: float = 1e-4

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_tex < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")


def level_normalizer(channels: int, height: int, width: int) -> float:
    """λ_ℓ = 1 / (4·C²·(H·W)²)."""
    return 1.0 / (4.0 * channels ** 2 * (height * width) ** 2)


def gram(features: np.ndarray) -> np.ndarray:
    return ag.gram(as_grid(features, "gram input")).value


def texture_loss(output_levels: Levels, swaps: Sequence[SwapResult], weights: LossWeights = None) -> ag.Var:
    """Σ_ℓ λ_ℓ ‖Gr(φ_ℓ(out)⊙S*_ℓ) − Gr(T_ℓ⊙S*_ℓ)‖²_F over the levels present in ``swaps``.

    ``weights`` is accepted for symmetry with the other terms; λ_tex is
    applied in `total_objective`.
    """
    if isinstance(output_levels, FeaturePyramid):
        output_levels = output_levels.levels
    tape = ag._tape_of(*output_levels)
    loss = tape.constant(0.0)
    for swap in swaps:
        if not 1 <= swap.level <= len(output_levels):
            raise ShapeMismatchError(f"texture loss level {swap.level}", (swap.level,), (len(output_levels),))
        features = ag.lift(tape, output_levels[swap.level - 1])
        if tuple(features.shape) != swap.swapped.shape:
            raise ShapeMismatchError(f"texture loss level {swap.level}", features.shape, swap.swapped.shape)
        c, h, w = features.shape
        target = ag.gram(swap.swapped * swap.weight_map).value
        diff = ag.gram(features * swap.weight_map) - target
        loss = loss + level_normalizer(c, h, w) * ag.total(diff * diff)
    return loss


def adversarial_loss(d_real, d_fake) -> ag.Var:
    """ln D(real) + ln(1 − D(fake)); the discriminator ascends this."""
    tape = ag._tape_of(d_real, d_fake)
    return ag.log(ag.lift(tape, d_real)) + ag.log(1.0 - ag.lift(tape, d_fake))


def discriminator_loss(d_real, d_fake) -> ag.Var:
    """Descent form of the discriminator's ascent on `adversarial_loss`."""
    return -adversarial_loss(d_real, d_fake)


def generator_adversarial_loss(d_fake) -> ag.Var:
    """Non-saturating surrogate −ln D(G(x))."""
    return -ag.log(ag.lift(ag._tape_of(d_fake), d_fake))


def cycle_loss(x, fgx, y, gfy) -> ag.Var:
    """mean|F(G(x)) − x| + mean|G(F(y)) − y|."""
    for name, a, b in (("x vs F(G(x))", x, fgx), ("y vs G(F(y))", y, gfy)):
        if tuple(np.shape(a.value if isinstance(a, ag.Var) else a)) != tuple(
            np.shape(b.value if isinstance(b, ag.Var) else b)
        ):
            raise ShapeMismatchError(f"cycle loss {name}", np.shape(a), np.shape(b))
    tape = ag._tape_of(x, fgx, y, gfy)
    x, fgx, y, gfy = (ag.lift(tape, v) for v in (x, fgx, y, gfy))
    return ag.mean(ag.absolute(fgx - x)) + ag.mean(ag.absolute(gfy - y))


def total_objective(adv_G, adv_F, cyc, tex_G, tex_F, weights: LossWeights = None) -> ag.Var:
    weights = weights or LossWeights()
    tape = ag._tape_of(adv_G, adv_F, cyc, tex_G, tex_F)
    adv_G, adv_F, cyc, tex_G, tex_F = (ag.lift(tape, v) for v in (adv_G, adv_F, cyc, tex_G, tex_F))
    return adv_G + adv_F + weights.lambda_cyc * cyc + weights.lambda_tex * (tex_G + tex_F)


def optimize_pixels_for_texture(
    extractor: Network,
    image: np.ndarray,
    swaps: Sequence[SwapResult],
    iterations: int = 200,
    lr: float = 1e-2,
) -> Tuple[np.ndarray, List[float]]:
    """Adam on the pixels of ``image`` against fixed texture targets.

    Returns the optimised image and the loss before each step plus the final loss.
    """
    pixels = as_grid(image, "texture optimisation input").copy()
    optimizer = Adam(lr=lr)
    history = []

    def loss_at(tape: ag.Tape, value: np.ndarray, as_leaf: bool) -> ag.Var:
        x = tape.leaf(value, "pixels") if as_leaf else tape.constant(value)
        levels = pyramid_on_tape(extractor, extractor.on_tape(tape), x)
        return texture_loss(levels, swaps)

    for _ in range(iterations):
        tape = ag.Tape()
        loss = loss_at(tape, pixels, as_leaf=True)
        history.append(float(loss))
        grads = tape.backward(loss)
        optimizer.step({"pixels": pixels}, grads)
    history.append(float(loss_at(ag.Tape(), pixels, as_leaf=False)))
    logger.debug("texture optimisation: %.4e -> %.4e", history[0], history[-1])
    return pixels, history
