"""Patch discriminator: three stride-2 3×3 convs with leaky ReLU, 1×1 conv, sigmoid, spatial mean."""

from typing import Dict, Sequence

import numpy as np

from ntg import autograd as ag
from ntg.errors import ShapeMismatchError
from ntg.formats import SeededWeightStream
from ntg.network import Network

KIND = "discriminator"
DEFAULT_WIDTHS = (16, 32, 64)
LEAK = 0.2


def build_discriminator(seed: int, in_channels: int = 1, widths: Sequence[int] = DEFAULT_WIDTHS) -> Network:
    stream = SeededWeightStream(seed)
    params = {}
    prev = in_channels
    for i, width in enumerate(widths, start=1):
        params[f"conv{i}.weight"] = stream.he_tensor((width, prev, 3, 3), prev * 9)
        params[f"conv{i}.bias"] = np.zeros(width)
        prev = width
    params["score.weight"] = stream.he_tensor((1, prev, 1, 1), prev)
    params["score.bias"] = np.zeros(1)
    return Network(KIND, {"in_channels": (in_channels,), "widths": tuple(widths)}, params)


def discriminate(net: Network, params: Dict[str, ag.Var], image) -> ag.Var:
    """Probability that ``image`` is real, averaged over the patch grid."""
    expected = net.meta["in_channels"][0]
    if image.shape[0] != expected:
        raise ShapeMismatchError("discriminator input channels", image.shape, (expected,))
    x = image
    for i in range(1, len(net.meta["widths"]) + 1):
        x = ag.leaky_relu(ag.conv2d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], 2, 1), LEAK)
    logits = ag.conv2d(x, params["score.weight"], params["score.bias"])
    return ag.mean(ag.sigmoid(logits))


def probability(net: Network, image: np.ndarray) -> float:
    tape = ag.Tape()
    return float(discriminate(net, net.on_tape(tape), tape.constant(image)))
