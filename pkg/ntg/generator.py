"""
Recursive multi-scale fusion generator.

    ξ₀   = encoder(input)                         at 1/2^{L-1} resolution
    ξ_s  = up( Res(ξ_{s-1} ⊕ T) + ξ_{s-1} )       s = 1 … L-1, coarsest T first
    out  = head(ξ_{L-1})                          (after one more up in 2× mode)

``up`` is nearest 2× replication followed by a 3×3 conv that also moves the
width to the next finer level's channel count.  Stage widths mirror the
extractor's channel plan so that T_ℓ concatenates with ξ.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from ntg import autograd as ag
from ntg.errors import ShapeMismatchError, UsageError
from ntg.featnet import DEFAULT_CHANNEL_PLAN
from ntg.formats import SeededWeightStream
from ntg.grid import as_grid
from ntg.matchswap import SwapResult
from ntg.network import Network

logger = logging.getLogger(__name__)

KIND = "generator"


def build_generator(
    seed: int,
    levels: int = 3,
    channel_plan: Sequence[int] = DEFAULT_CHANNEL_PLAN,
    in_channels: int = 1,
    out_channels: int = 1,
    scale_factor: int = 1,
) -> Network:
    if levels < 2:
        raise UsageError(f"generator needs at least 2 levels, got {levels}")
    if len(channel_plan) != levels:
        raise UsageError(f"channel plan {tuple(channel_plan)} does not have {levels} entries")
    if scale_factor not in (1, 2):
        raise UsageError(f"scale factor must be 1 or 2, got {scale_factor}")

    stream = SeededWeightStream(seed)
    params: Dict[str, np.ndarray] = {}

    def conv(name: str, out: int, inp: int) -> None:
        params[f"{name}.weight"] = stream.he_tensor((out, inp, 3, 3), inp * 9)
        params[f"{name}.bias"] = np.zeros(out)

    prev = in_channels
    for i in range(1, levels):
        conv(f"enc{i}", channel_plan[i], prev)
        prev = channel_plan[i]
    for stage in range(1, levels):
        width = channel_plan[levels - stage]
        conv(f"res{stage}.conv1", width, 2 * width)
        conv(f"res{stage}.conv2", width, width)
        conv(f"up{stage}", channel_plan[levels - stage - 1], width)
    if scale_factor == 2:
        conv("sr", channel_plan[0], channel_plan[0])
    conv("head", out_channels, channel_plan[0])

    meta = {
        "levels": (levels,),
        "channel_plan": tuple(channel_plan),
        "in_channels": (in_channels,),
        "out_channels": (out_channels,),
        "scale_factor": (scale_factor,),
    }
    return Network(KIND, meta, params)


def generator_from_sections(sections, prefix: str) -> Network:
    net = Network.from_sections(KIND, sections, prefix)
    for key in ("levels", "channel_plan", "in_channels", "out_channels", "scale_factor"):
        if key not in net.meta:
            raise ShapeMismatchError(f"generator '{prefix}' lacks meta.{key}", (), (key,))
    return net


def stage_levels(net: Network) -> List[int]:
    """Pyramid level consumed by each stage, coarsest first."""
    levels = net.meta["levels"][0]
    return list(range(levels, 1, -1))


def stage_textures(net: Network, swaps: Sequence[SwapResult]) -> List[Optional[np.ndarray]]:
    """Pick T_ℓ for every stage; levels without a swap get zero maps."""
    by_level = {s.level: s.swapped for s in swaps}
    return [by_level.get(ell) for ell in stage_levels(net)]


def _conv(params, name, x, stride=1):
    return ag.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride, 1)


def generator_on_tape(
    net: Network,
    params: Dict[str, ag.Var],
    image,
    textures: Sequence[Optional[np.ndarray]],
    trace: Optional[List[ag.Var]] = None,
) -> ag.Var:
    """Differentiable forward pass; ``trace`` collects ξ₀ … ξ_{L-1} when given."""
    levels = net.meta["levels"][0]
    expected = net.meta["in_channels"][0]
    if image.shape[0] != expected:
        raise ShapeMismatchError("generator input channels", image.shape, (expected,) + tuple(image.shape[1:]))
    step = 2 ** (levels - 1)
    if image.shape[1] % step or image.shape[2] % step:
        raise ShapeMismatchError(f"generator input dims must be divisible by {step}", image.shape[1:], (step, step))
    if len(textures) != levels - 1:
        raise ShapeMismatchError("texture list vs generator stages", (len(textures),), (levels - 1,))

    xi = image
    for i in range(1, levels):
        xi = ag.relu(_conv(params, f"enc{i}", xi, stride=2))
    if trace is not None:
        trace.append(xi)

    for stage, (ell, texture) in enumerate(zip(stage_levels(net), textures), start=1):
        if texture is None:
            texture = np.zeros(xi.shape)
        elif tuple(texture.shape) != tuple(xi.shape):
            raise ShapeMismatchError(f"texture map for level {ell}", texture.shape, xi.shape)
        fused = ag.concat(xi, texture)
        res = _conv(params, f"res{stage}.conv2", ag.relu(_conv(params, f"res{stage}.conv1", fused)))
        xi = _conv(params, f"up{stage}", ag.upsample2(res + xi))
        if trace is not None:
            trace.append(xi)

    if net.meta["scale_factor"][0] == 2:
        xi = _conv(params, "sr", ag.upsample2(xi))
    return _conv(params, "head", xi)


def _evaluate(net: Network, image: np.ndarray, textures) -> np.ndarray:
    image = as_grid(image, "generator input")
    tape = ag.Tape()
    out = generator_on_tape(net, net.on_tape(tape), tape.constant(image), textures)
    return out.value


def generate(net: Network, image: np.ndarray, swaps: Sequence[SwapResult]) -> np.ndarray:
    """Raw generator output; callers clamp to [0, 1] only when exporting."""
    return _evaluate(net, image, stage_textures(net, swaps))


def generate_without_texture(net: Network, image: np.ndarray) -> np.ndarray:
    return _evaluate(net, image, [None] * (net.meta["levels"][0] - 1))
