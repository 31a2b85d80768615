"""
Fixed feature extractor φ: a seeded convolutional pyramid.

Level ℓ = 1 is conv3×3 → ReLU on the image; each further level applies
conv3×3 → ReLU → 2×2 average pool to the previous level, halving the
spatial dims (rounding up).  Weights come from the seeded xorshift64*
stream, or from NTX1 sections converted from a pre-trained network.
"""

import dataclasses
import logging
from typing import List, Sequence

import numpy as np

from ntg import autograd as ag
from ntg.errors import ShapeMismatchError, UsageError
from ntg.formats import SeededWeightStream
from ntg.grid import as_grid
from ntg.network import Network

logger = logging.getLogger(__name__)

DEFAULT_CHANNEL_PLAN = (16, 32, 64)
KIND = "featnet"


@dataclasses.dataclass(frozen=True)
class LevelGeometry:
    channels: int
    height: int
    width: int
    factor: int


@dataclasses.dataclass
class FeaturePyramid:
    levels: List[np.ndarray]

    @property
    def geometry(self) -> List[LevelGeometry]:
        return [
            LevelGeometry(lvl.shape[0], lvl.shape[1], lvl.shape[2], 2 ** i)
            for i, lvl in enumerate(self.levels)
        ]

    def __len__(self) -> int:
        return len(self.levels)

    def level(self, ell: int) -> np.ndarray:
        """Level by 1-based index (1 = finest)."""
        return self.levels[ell - 1]


def build_extractor(
    seed: int,
    levels: int = 3,
    channel_plan: Sequence[int] = DEFAULT_CHANNEL_PLAN,
    in_channels: int = 1,
) -> Network:
    if levels < 1 or not channel_plan:
        raise UsageError("extractor needs at least one level and a non-empty channel plan")
    if len(channel_plan) != levels:
        raise UsageError(f"channel plan {tuple(channel_plan)} does not have {levels} entries")

    stream = SeededWeightStream(seed)
    params = {}
    prev = in_channels
    for ell, width in enumerate(channel_plan, start=1):
        fan_in = prev * 9
        params[f"conv{ell}.weight"] = stream.he_tensor((width, prev, 3, 3), fan_in)
        params[f"conv{ell}.bias"] = np.zeros(width)
        prev = width
    meta = {"levels": (levels,), "channel_plan": tuple(channel_plan), "in_channels": (in_channels,)}
    net = Network(KIND, meta, params)
    logger.debug("Built extractor seed=%d plan=%s (%d params)", seed, tuple(channel_plan), net.param_count())
    return net


def extractor_from_sections(sections) -> Network:
    net = Network.from_sections(KIND, sections, KIND)
    levels = net.meta.get("levels", (sum(1 for n in net.params if n.endswith(".weight")),))[0]
    if "channel_plan" not in net.meta:
        net.meta["channel_plan"] = tuple(net[f"conv{ell}.weight"].shape[0] for ell in range(1, levels + 1))
        net.meta["in_channels"] = (net["conv1.weight"].shape[1],)
        net.meta["levels"] = (levels,)
    return net


def level_count(net: Network) -> int:
    return net.meta["levels"][0]


def pyramid_on_tape(net: Network, params, image) -> List[ag.Var]:
    """Differentiable pyramid; ``params`` are the extractor's Vars on the image's tape."""
    expected = net.meta["in_channels"][0]
    if image.shape[0] != expected:
        raise ShapeMismatchError("extractor input channels", image.shape, (expected,) + tuple(image.shape[1:]))
    out = []
    x = image
    for ell in range(1, level_count(net) + 1):
        x = ag.relu(ag.conv2d(x, params[f"conv{ell}.weight"], params[f"conv{ell}.bias"], 1, 1))
        if ell > 1:
            x = ag.avg_pool2(x)
        out.append(x)
    return out


def extract_pyramid(net: Network, image: np.ndarray) -> FeaturePyramid:
    image = as_grid(image, "extractor input")
    tape = ag.Tape()
    levels = pyramid_on_tape(net, net.on_tape(tape), tape.constant(image))
    return FeaturePyramid([lvl.value for lvl in levels])
