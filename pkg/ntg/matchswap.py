"""
Patch matching and feature swapping in neural space.

For every input location the reference patch with the highest score
⟨p, q_j / ‖q_j‖⟩ is chosen (lowest index on ties), where q_j are patches of
the blurred reference's features.  The raw reference's patch at the same
coordinates is then folded into the swapped map T, averaging overlaps.

Scores are computed as a correlation of the input features with the
normalised reference patches used as a kernel bank.  The bank is split into
fixed-size blocks that may run on a thread pool; blocks are merged in index
order with a strict comparison, so the result never depends on the thread
count.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ntg import config
from ntg.errors import ShapeMismatchError
from ntg.featnet import FeaturePyramid, extract_pyramid
from ntg.grid import as_grid, bicubic_resample, bicubic_resize, conv2d
from ntg.network import Network

logger = logging.getLogger(__name__)

PATCH_SIZE = 3
NORM_EPS = 1e-12


@dataclasses.dataclass
class PatchSet:
    level: int
    patch_size: int
    stride: int
    channels: int
    coords: np.ndarray  # (N, 2) top-left (row, col)
    vectors: np.ndarray  # (N, C·k·k), channel-major then row-major

    def __len__(self) -> int:
        return len(self.vectors)

    def kernels(self) -> np.ndarray:
        k = self.patch_size
        return self.vectors.reshape(len(self), self.channels, k, k)


@dataclasses.dataclass
class SwapResult:
    level: int
    swapped: np.ndarray  # T_ℓ, same shape as the input features
    weight_map: np.ndarray  # S*_ℓ, (1, H, W) cosine scores in [-1, 1]
    index_map: np.ndarray  # (Ho, Wo) chosen reference patch per valid location

    def to_sections(self, prefix: str = "") -> Dict[str, np.ndarray]:
        head = f"{prefix}level{self.level}"
        return {
            f"{head}.swapped": self.swapped,
            f"{head}.weight_map": self.weight_map,
            f"{head}.index_map": self.index_map.astype(np.float64),
        }


def _patch_windows(features: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(Ho, Wo, C, k, k) view of every valid patch."""
    windows = sliding_window_view(features, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return windows.transpose(1, 2, 0, 3, 4)


def extract_patches(features: np.ndarray, patch_size: int = PATCH_SIZE, stride: int = 1, level: int = 1) -> PatchSet:
    features = as_grid(features, "patch source")
    c, h, w = features.shape
    if patch_size < 1 or patch_size > h or patch_size > w:
        raise ShapeMismatchError(f"patch size {patch_size} vs feature map", (patch_size, patch_size), (h, w))
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    windows = _patch_windows(features, patch_size, stride)
    ho, wo = windows.shape[:2]
    rows, cols = np.meshgrid(np.arange(ho) * stride, np.arange(wo) * stride, indexing="ij")
    return PatchSet(
        level=level,
        patch_size=patch_size,
        stride=stride,
        channels=c,
        coords=np.stack([rows.ravel(), cols.ravel()], axis=1),
        vectors=windows.reshape(ho * wo, c * patch_size * patch_size).copy(),
    )


def concat_patchsets(sets: Sequence[PatchSet]) -> PatchSet:
    first = sets[0]
    for other in sets[1:]:
        if (other.channels, other.patch_size) != (first.channels, first.patch_size):
            raise ShapeMismatchError("pooled patch sets", (other.channels, other.patch_size), (first.channels, first.patch_size))
    return PatchSet(
        level=first.level,
        patch_size=first.patch_size,
        stride=first.stride,
        channels=first.channels,
        coords=np.concatenate([s.coords for s in sets]),
        vectors=np.concatenate([s.vectors for s in sets]),
    )


def _input_patch_norms(features: np.ndarray, k: int, stride: int) -> np.ndarray:
    ones = np.ones((1, features.shape[0], k, k))
    return np.sqrt(np.maximum(conv2d(features * features, ones, stride=stride)[0], 0.0))


def _check_match(features: np.ndarray, patches: PatchSet) -> None:
    if len(patches) == 0:
        raise ValueError("reference patch set is empty")
    if features.shape[0] != patches.channels:
        raise ShapeMismatchError("input features vs reference patch channels", features.shape, (patches.channels,))


def _normalised_bank(patches: PatchSet) -> np.ndarray:
    norms = np.linalg.norm(patches.vectors, axis=1) + NORM_EPS
    return (patches.vectors / norms[:, np.newaxis]).reshape(patches.kernels().shape)


def _blocks(n: int) -> List[Tuple[int, int]]:
    size = max(1, config.MATCH_CHUNK)
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _map_blocks(fn, blocks):
    threads = min(config.get_threads(), len(blocks))
    if threads <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="ntg-match") as pool:
        return list(pool.map(fn, blocks))


def similarity_maps(
    input_features: np.ndarray,
    ref_patches: PatchSet,
    normalize_input: bool = False,
    stride: int = 1,
) -> np.ndarray:
    """Score maps S_j for every reference patch, shaped (N, Ho, Wo)."""
    input_features = as_grid(input_features, "input features")
    _check_match(input_features, ref_patches)
    bank = _normalised_bank(ref_patches)
    blocks = _map_blocks(lambda b: conv2d(input_features, bank[b[0]:b[1]], stride=stride), _blocks(len(bank)))
    scores = np.concatenate(blocks, axis=0)
    if normalize_input:
        norms = _input_patch_norms(input_features, ref_patches.patch_size, stride)
        scores = scores / (norms + NORM_EPS)
    return scores


def best_matches(
    input_features: np.ndarray,
    ref_patches: PatchSet,
    normalize_input: bool = False,
    stride: int = 1,
) -> np.ndarray:
    """argmax_j S_j per location without materialising every score map.

    An all-zero input patch scores 0 against every reference patch; it takes
    the lowest-index all-zero reference patch when one exists.
    """
    input_features = as_grid(input_features, "input features")
    _check_match(input_features, ref_patches)
    bank = _normalised_bank(ref_patches)
    blocks = _blocks(len(bank))
    norms = None
    if normalize_input:
        norms = _input_patch_norms(input_features, ref_patches.patch_size, stride) + NORM_EPS

    def block_best(block):
        lo, hi = block
        scores = conv2d(input_features, bank[lo:hi], stride=stride)
        if norms is not None:
            scores = scores / norms
        local = np.argmax(scores, axis=0)
        return local + lo, np.take_along_axis(scores, local[np.newaxis], axis=0)[0]

    best_idx, best_score = None, None
    for idx, score in _map_blocks(block_best, blocks):
        if best_idx is None:
            best_idx, best_score = idx, score
            continue
        better = score > best_score
        best_idx = np.where(better, idx, best_idx)
        best_score = np.where(better, score, best_score)
    return _prefer_zero_patches(input_features, ref_patches, stride, best_idx)


def _prefer_zero_patches(input_features, ref_patches: PatchSet, stride: int, best_idx: np.ndarray) -> np.ndarray:
    zero_refs = np.flatnonzero(~ref_patches.vectors.any(axis=1))
    if not len(zero_refs):
        return best_idx
    k = ref_patches.patch_size
    zero_inputs = ~_patch_windows(input_features, k, stride).any(axis=(2, 3, 4))
    return np.where(zero_inputs, zero_refs[0], best_idx)


def _fold(shape: tuple, chosen: np.ndarray, cosine: np.ndarray, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """Average overlapping patches (Ho, Wo, C, k, k) back onto a (C, H, W) map."""
    ho, wo, _, k, _ = chosen.shape
    swapped = np.zeros(shape)
    weights = np.zeros(shape[1:])
    counts = np.zeros(shape[1:])
    row_span = stride * (ho - 1) + 1
    col_span = stride * (wo - 1) + 1
    for di in range(k):
        for dj in range(k):
            rows = slice(di, di + row_span, stride)
            cols = slice(dj, dj + col_span, stride)
            swapped[:, rows, cols] += chosen[:, :, :, di, dj].transpose(2, 0, 1)
            weights[rows, cols] += cosine
            counts[rows, cols] += 1.0
    covered = counts > 0
    swapped[:, covered] /= counts[covered]
    weights[covered] /= counts[covered]
    return swapped, np.clip(weights, -1.0, 1.0)[np.newaxis]


def _swap(
    input_features: np.ndarray,
    raw_patches: PatchSet,
    blur_patches: PatchSet,
    normalize_input: bool,
    stride: int,
    level: int,
) -> SwapResult:
    index_map = best_matches(input_features, blur_patches, normalize_input, stride)
    k = blur_patches.patch_size
    c = input_features.shape[0]

    inputs = _patch_windows(input_features, k, stride).reshape(-1, c * k * k)
    matched = blur_patches.vectors[index_map.ravel()]
    input_norms, matched_norms = np.linalg.norm(inputs, axis=1), np.linalg.norm(matched, axis=1)
    denom = input_norms * matched_norms
    dots = np.einsum("nd,nd->n", inputs, matched)
    # cos(0, 0) = 1, cos(0, q) = 0
    cosine = np.where((input_norms == 0) & (matched_norms == 0), 1.0, 0.0)
    cosine = np.divide(dots, denom, out=cosine, where=denom > 0).reshape(index_map.shape)

    chosen = raw_patches.kernels()[index_map]
    swapped, weight_map = _fold(input_features.shape, chosen, cosine, stride)
    return SwapResult(level=level, swapped=swapped, weight_map=weight_map, index_map=index_map)


def swap_features(
    input_features: np.ndarray,
    ref_raw_features: np.ndarray,
    ref_blur_features: np.ndarray,
    patch_size: int = PATCH_SIZE,
    normalize_input: bool = False,
    stride: int = 1,
    level: int = 1,
) -> SwapResult:
    return swap_features_pooled(
        input_features, [(ref_raw_features, ref_blur_features)], patch_size, normalize_input, stride, level,
    )


def swap_features_pooled(
    input_features: np.ndarray,
    references: Sequence[Tuple[np.ndarray, np.ndarray]],
    patch_size: int = PATCH_SIZE,
    normalize_input: bool = False,
    stride: int = 1,
    level: int = 1,
) -> SwapResult:
    """Swap against the union of patches from several (raw, blurred) references."""
    input_features = as_grid(input_features, "input features")
    if not references:
        raise ValueError("at least one reference is required")
    raw_sets, blur_sets = [], []
    for raw, blur in references:
        raw, blur = as_grid(raw, "raw reference features"), as_grid(blur, "blurred reference features")
        if raw.shape != blur.shape:
            raise ShapeMismatchError("raw vs blurred reference features", raw.shape, blur.shape)
        if raw.shape[0] != input_features.shape[0]:
            raise ShapeMismatchError("reference vs input feature channels", raw.shape, input_features.shape)
        # reference patches are enumerated densely; ``stride`` applies to input locations
        raw_sets.append(extract_patches(raw, patch_size, 1, level))
        blur_sets.append(extract_patches(blur, patch_size, 1, level))
    return _swap(
        input_features, concat_patchsets(raw_sets), concat_patchsets(blur_sets), normalize_input, stride, level,
    )


# ============================================================
# Pyramid-level pipeline
# ============================================================

def blur_reference(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """I^{Ref↑↓}: bicubic down by ``factor`` then back up to the original dims."""
    image = as_grid(image, "reference image")
    if factor == 1:
        return image.copy()
    _, h, w = image.shape
    return bicubic_resize(bicubic_resample(image, Fraction(1, factor)), h, w)


@dataclasses.dataclass
class ReferencePyramids:
    raw: FeaturePyramid
    blur: FeaturePyramid


def reference_pyramids(net: Network, image: np.ndarray, blur_factor: int = 2) -> ReferencePyramids:
    return ReferencePyramids(extract_pyramid(net, image), extract_pyramid(net, blur_reference(image, blur_factor)))


def match_pyramid(
    input_pyramid: FeaturePyramid,
    references: Sequence[ReferencePyramids],
    levels: Optional[Iterable[int]] = None,
    patch_size: int = PATCH_SIZE,
    normalize_input: bool = False,
) -> List[SwapResult]:
    """Independent matching and swapping at each requested level (1 = finest)."""
    if levels is None:
        levels = range(1, len(input_pyramid) + 1)
    results = []
    for ell in sorted(set(levels)):
        pairs = [(ref.raw.level(ell), ref.blur.level(ell)) for ref in references]
        results.append(
            swap_features_pooled(input_pyramid.level(ell), pairs, patch_size, normalize_input, level=ell)
        )
    return results


def texture_swaps(
    net: Network,
    image: np.ndarray,
    references: Sequence[Union[np.ndarray, ReferencePyramids]],
    levels: Optional[Iterable[int]] = None,
    blur_factor: int = 2,
    patch_size: int = PATCH_SIZE,
    normalize_input: bool = False,
) -> List[SwapResult]:
    """φ → blur → match → swap for an image and its reference images.

    References may be given as images or as pyramids built once by
    `reference_pyramids` with the same extractor and blur factor.
    """
    refs = [
        ref if isinstance(ref, ReferencePyramids) else reference_pyramids(net, ref, blur_factor) for ref in references
    ]
    return match_pyramid(extract_pyramid(net, image), refs, levels, patch_size, normalize_input)
