"""
Seeded two-domain texture corpus.

Each image is a dim background with a few rectangles and discs.  Domain X
fills the shapes with horizontal stripes, domain Y with a checkerboard; both
have a period of 4 pixels.  The training pools use independent geometry
(unpaired); validation pairs share geometry and differ only in fill.
With ``scale_factor=2`` every X image is additionally bicubic-downscaled
to half size, which turns the task into texture-guided 2× upsampling.

`write_corpus` / `load_corpus` store the corpus as PGM files:

    X/train/0000.pgm ...   Y/train/0000.pgm ...   pairs/val/0000_x.pgm, 0000_y.pgm
    manifest.csv           split,domain,index,path
"""

import csv
import dataclasses
import io
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ntg.errors import DataError
from ntg.formats import atomic_write_bytes, read_pgm, write_pgm
from ntg.grid import bicubic_resize

logger = logging.getLogger(__name__)

BACKGROUND = 0.1
TEXTURE_LOW = 0.3
TEXTURE_HIGH = 0.9
MANIFEST = "manifest.csv"


@dataclasses.dataclass(frozen=True)
class ToyDomainSpec:
    image_size: int = 32
    train_per_domain: int = 64
    val_pairs: int = 16
    period: int = 4
    max_shapes: int = 3
    seed: int = 0
    scale_factor: int = 1

    def __post_init__(self):
        if self.image_size < 8 or self.period < 2 or self.period % 2:
            raise ValueError(f"unsupported corpus geometry: {self}")
        if self.train_per_domain < 1 or self.val_pairs < 0 or self.max_shapes < 1:
            raise ValueError(f"corpus sizes must be positive: {self}")
        if self.scale_factor not in (1, 2) or self.image_size % (self.scale_factor ** 2):
            raise ValueError(f"scale factor must be 1, or 2 with image_size divisible by 4: {self}")


@dataclasses.dataclass
class ToyCorpus:
    x_train: List[np.ndarray]
    y_train: List[np.ndarray]
    val_x: List[np.ndarray]
    val_y: List[np.ndarray]

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.x_train[0].shape[1:]


def stripes(size: int, period: int) -> np.ndarray:
    rows = (np.arange(size) // (period // 2)) % 2
    return np.repeat(rows[:, None], size, axis=1).astype(np.float64)


def checkerboard(size: int, period: int) -> np.ndarray:
    cells = np.arange(size) // (period // 2)
    return ((cells[:, None] + cells[None, :]) % 2).astype(np.float64)


def random_mask(rng: np.random.Generator, spec: ToyDomainSpec) -> np.ndarray:
    """Union of 1..max_shapes rectangles and discs."""
    n = spec.image_size
    mask = np.zeros((n, n), dtype=bool)
    rows, cols = np.mgrid[0:n, 0:n]
    for _ in range(int(rng.integers(1, spec.max_shapes + 1))):
        if rng.random() < 0.5:
            h, w = rng.integers(n // 4, n // 2 + 1, size=2)
            top, left = rng.integers(0, n - h + 1), rng.integers(0, n - w + 1)
            mask[top:top + h, left:left + w] = True
        else:
            radius = int(rng.integers(n // 8, n // 4 + 1))
            cy, cx = rng.integers(radius, n - radius, size=2)
            mask |= (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2
    return mask


def render(mask: np.ndarray, fill: np.ndarray) -> np.ndarray:
    texture = TEXTURE_LOW + (TEXTURE_HIGH - TEXTURE_LOW) * fill
    return np.where(mask, texture, BACKGROUND)[None, :, :]


def degrade(image: np.ndarray, scale_factor: int) -> np.ndarray:
    if scale_factor == 1:
        return image
    n = image.shape[1] // scale_factor
    return np.clip(bicubic_resize(image, n, n), 0.0, 1.0)


def generate_corpus(spec: ToyDomainSpec = ToyDomainSpec()) -> ToyCorpus:
    rng = np.random.default_rng(spec.seed)
    x_fill = stripes(spec.image_size, spec.period)
    y_fill = checkerboard(spec.image_size, spec.period)
    s = spec.scale_factor

    x_train = [degrade(render(random_mask(rng, spec), x_fill), s) for _ in range(spec.train_per_domain)]
    y_train = [render(random_mask(rng, spec), y_fill) for _ in range(spec.train_per_domain)]
    val_x, val_y = [], []
    for _ in range(spec.val_pairs):
        mask = random_mask(rng, spec)
        val_x.append(degrade(render(mask, x_fill), s))
        val_y.append(render(mask, y_fill))
    logger.debug("Generated toy corpus seed=%d (%d train/domain, %d val)", spec.seed, len(x_train), len(val_x))
    return ToyCorpus(x_train, y_train, val_x, val_y)


def write_corpus(corpus: ToyCorpus, root) -> Path:
    root = Path(root)
    rows = []

    def put(image, rel: str, split: str, domain: str, index: int) -> None:
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(image, path)
        rows.append((split, domain, index, rel))

    for i, img in enumerate(corpus.x_train):
        put(img, f"X/train/{i:04d}.pgm", "train", "X", i)
    for i, img in enumerate(corpus.y_train):
        put(img, f"Y/train/{i:04d}.pgm", "train", "Y", i)
    for i, (x, y) in enumerate(zip(corpus.val_x, corpus.val_y)):
        put(x, f"pairs/val/{i:04d}_x.pgm", "val", "X", i)
        put(y, f"pairs/val/{i:04d}_y.pgm", "val", "Y", i)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("split", "domain", "index", "path"))
    writer.writerows(rows)
    atomic_write_bytes(root / MANIFEST, buf.getvalue().encode("utf-8"))
    logger.info("Wrote %d images to %s", len(rows), root)
    return root / MANIFEST


def load_corpus(root) -> ToyCorpus:
    """Read a corpus written by `write_corpus`; pixel values are 8-bit quantised."""
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise DataError(f"no {MANIFEST} in {root}")
    pools = {("train", "X"): {}, ("train", "Y"): {}, ("val", "X"): {}, ("val", "Y"): {}}
    with manifest.open(encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            key = (row.get("split"), row.get("domain"))
            if key not in pools:
                raise DataError(f"{manifest}: unknown split/domain {key}")
            pools[key][int(row["index"])] = read_pgm(root / row["path"])

    def ordered(key) -> List[np.ndarray]:
        return [pools[key][i] for i in sorted(pools[key])]

    corpus = ToyCorpus(ordered(("train", "X")), ordered(("train", "Y")), ordered(("val", "X")), ordered(("val", "Y")))
    if not corpus.x_train or not corpus.y_train:
        raise DataError(f"{manifest}: both training pools must be non-empty")
    if len(corpus.val_x) != len(corpus.val_y):
        raise DataError(f"{manifest}: validation pairs are incomplete")
    return corpus
