"""
Cycle-consistent adversarial training with texture priors.

G maps domain X to Y and F maps Y to X; D_X and D_Y score realness.  Each
step first updates both discriminators on ln D(real) + ln(1 − D(fake)),
then both generators on the non-saturating adversarial terms, the L1 cycle
term and the Gram texture terms.  The fixed extractor φ is shared by every
texture computation.

Swapped textures for real training images depend only on φ and the images,
so they are cached per (image, references, mode).  Reference pyramids are
cached per reference image.  Textures for the fake images feeding the cycle
pass change with the generators and are matched afresh every step.

With ``scale_factor=2`` X holds half-size images: G upsamples by 2 and F
reads a bicubic-downscaled copy of its Y input.
"""

import dataclasses
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ntg import autograd as ag
from ntg import losses
from ntg.discriminator import build_discriminator, discriminate
from ntg.errors import DataError, NumericError, UsageError
from ntg.featnet import DEFAULT_CHANNEL_PLAN, build_extractor, pyramid_on_tape
from ntg.formats import atomic_write_bytes, write_ntx1
from ntg.generator import build_generator, generator_on_tape, stage_levels, stage_textures
from ntg.grid import bicubic_resize
from ntg.matchswap import ReferencePyramids, SwapResult, reference_pyramids, texture_swaps
from ntg.metrics import MetricRow, csv_text, evaluate_pair, fmt
from ntg.network import Network
from ntg.optim import Adam
from ntg.toydata import ToyCorpus, ToyDomainSpec, generate_corpus

logger = logging.getLogger(__name__)

MODES = ("full", "single_scale_texture", "no_texture")
CSV_COLUMNS = ("epoch", "lr", "adv_G", "adv_F", "cyc", "tex_G", "tex_F", "total", "val_psnr", "val_ssim")
GENERATORS = ("G", "F")
DISCRIMINATORS = ("D_X", "D_Y")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr0: float = 2e-4
    lr_halving_period: int = 50
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_cyc: float = 10.0
    lambda_tex: float = 1e-4
    seed: int = 0
    mode: str = "full"
    levels: int = 3
    num_references: int = 4
    blur_factor: int = 2
    checkpoint_every: int = 10
    steps_per_epoch: int = 0  # 0: one pass over the X training pool
    normalize_input: bool = False
    scale_factor: int = 1  # 2: X images are half the size of Y images

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise UsageError(f"epochs must be >= 0 and batch_size >= 1 (got {self.epochs}, {self.batch_size})")
        if self.lr0 < 0 or self.lr_halving_period < 1:
            raise UsageError("lr0 must be >= 0 and lr_halving_period >= 1")
        if self.levels < 2 or self.num_references < 1 or self.blur_factor < 1:
            raise UsageError("levels >= 2, num_references >= 1 and blur_factor >= 1 are required")
        if self.checkpoint_every < 1 or self.steps_per_epoch < 0:
            raise UsageError("checkpoint_every must be >= 1 and steps_per_epoch >= 0")
        if self.scale_factor not in (1, 2):
            raise UsageError(f"scale_factor must be 1 or 2, got {self.scale_factor}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 / 2 ** (epoch // self.lr_halving_period)

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_cyc, self.lambda_tex)

    @property
    def channel_plan(self) -> Tuple[int, ...]:
        if self.levels == len(DEFAULT_CHANNEL_PLAN):
            return DEFAULT_CHANNEL_PLAN
        return tuple(16 * 2 ** i for i in range(self.levels))

    def texture_levels(self) -> List[int]:
        """Pyramid levels matched for real inputs in this mode."""
        if self.mode == "full":
            return list(range(1, self.levels + 1))
        if self.mode == "single_scale_texture":
            return [1]
        return []


@dataclasses.dataclass(frozen=True)
class LossReport:
    adv_G: float
    adv_F: float
    cyc: float
    tex_G: float
    tex_F: float
    total: float
    disc: float = 0.0


class KeyedCache:
    """Values computed once per key; a ``None`` key always recomputes."""

    def __init__(self):
        self._entries: Dict[tuple, object] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key, compute):
        if key is None:
            return compute()
        found = self._entries.get(key)
        if found is not None:
            self.hits += 1
            return found
        self.misses += 1
        found = self._entries[key] = compute()
        return found


@dataclasses.dataclass
class TrainState:
    extractor: Network
    nets: Dict[str, Network]
    opt_gen: Adam
    opt_disc: Adam
    rng: np.random.Generator
    cache: KeyedCache = dataclasses.field(default_factory=KeyedCache)  # real-image swaps
    pyramids: KeyedCache = dataclasses.field(default_factory=KeyedCache)  # reference pyramids
    step: int = 0
    scale_factor: int = 1

    def to_sections(self) -> Dict[str, np.ndarray]:
        sections = self.extractor.to_sections("featnet")
        for name, net in self.nets.items():
            sections.update(net.to_sections(name))
        return sections


def init_state(config: TrainConfig, in_channels: int = 1) -> TrainState:
    """Seeded networks: φ from ``seed``, G/F/D_X/D_Y from seed+1 … seed+4."""
    plan = config.channel_plan
    extractor = build_extractor(config.seed, config.levels, plan, in_channels)
    nets = {
        "G": build_generator(config.seed + 1, config.levels, plan, in_channels, in_channels, config.scale_factor),
        "F": build_generator(config.seed + 2, config.levels, plan, in_channels, in_channels),
        "D_X": build_discriminator(config.seed + 3, in_channels),
        "D_Y": build_discriminator(config.seed + 4, in_channels),
    }
    betas = dict(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    return TrainState(
        extractor=extractor,
        nets=nets,
        opt_gen=Adam(config.lr0, **betas),
        opt_disc=Adam(config.lr0, **betas),
        rng=np.random.default_rng(config.seed),
        scale_factor=config.scale_factor,
    )


# ============================================================
# One step
# ============================================================

def _checked(term: str, value: ag.Var) -> ag.Var:
    if not np.isfinite(float(value)):
        raise NumericError(term, f"value {float(value)}")
    return value


def reference_set(state: TrainState, config: TrainConfig, images, keys=None) -> List[ReferencePyramids]:
    """Raw and blurred pyramids per reference, cached under ``keys`` when given."""
    keys = [None] * len(images) if keys is None else list(keys)
    if len(keys) != len(images):
        raise UsageError(f"{len(keys)} reference keys for {len(images)} references")
    return [
        state.pyramids.get(key, lambda image=image: reference_pyramids(state.extractor, image, config.blur_factor))
        for image, key in zip(images, keys)
    ]


def encoder_view(state: TrainState, name: str, image: np.ndarray) -> np.ndarray:
    """The image as the named generator's encoder sees it."""
    if name == "F" and state.scale_factor == 2:
        h, w = image.shape[1:]
        return bicubic_resize(image, h // 2, w // 2)
    return image


def _real_swaps(state, config, image, refs, key) -> List[SwapResult]:
    levels = config.texture_levels()
    if not levels:
        return []
    cache_key = None if key is None else key + (config.mode,)
    return state.cache.get(
        cache_key,
        lambda: texture_swaps(
            state.extractor, image, refs, levels, config.blur_factor, normalize_input=config.normalize_input
        ),
    )


def _fake_swaps(state, config, name: str, fake: np.ndarray, refs) -> List[SwapResult]:
    """Stage textures for a generated image; the finest level never feeds a stage."""
    if config.mode != "full":
        return []
    net = state.nets[name]
    return texture_swaps(
        state.extractor, encoder_view(state, name, fake), refs, stage_levels(net), config.blur_factor,
        normalize_input=config.normalize_input,
    )


def _translate(state, params, name, image, swaps) -> ag.Var:
    net = state.nets[name]
    if name == "F" and state.scale_factor == 2:
        h, w = image.shape[1:]
        image = ag.resize(image, h // 2, w // 2)
    return generator_on_tape(net, params[name], image, stage_textures(net, swaps))


def _texture_term(state, tape, image: ag.Var, swaps) -> ag.Var:
    if not swaps:
        return tape.constant(0.0)
    ext_params = state.extractor.on_tape(tape)
    return losses.texture_loss(pyramid_on_tape(state.extractor, ext_params, image), swaps)


def _accumulate(total: Dict, grads: Dict, scale: float) -> None:
    for key, grad in grads.items():
        total[key] = grad * scale if key not in total else total[key] + grad * scale


def _discriminator_pass(state, x, y, fake_x, fake_y) -> Tuple[float, Dict]:
    tape = ag.Tape()
    params = {name: state.nets[name].on_tape(tape, owner=name) for name in DISCRIMINATORS}
    term_y = _checked(
        "D_Y",
        losses.discriminator_loss(
            discriminate(state.nets["D_Y"], params["D_Y"], tape.constant(y)),
            discriminate(state.nets["D_Y"], params["D_Y"], tape.constant(fake_y)),
        ),
    )
    term_x = _checked(
        "D_X",
        losses.discriminator_loss(
            discriminate(state.nets["D_X"], params["D_X"], tape.constant(x)),
            discriminate(state.nets["D_X"], params["D_X"], tape.constant(fake_x)),
        ),
    )
    loss = term_x + term_y
    return float(loss), tape.backward(loss)


def _generator_pass(state, config, sample) -> Tuple[LossReport, Dict]:
    x, y, swaps_x, swaps_y, tex_x, ref_x, ref_y = sample
    tape = ag.Tape()
    params = {name: state.nets[name].on_tape(tape, owner=name) for name in GENERATORS}
    d_params = {name: state.nets[name].on_tape(tape) for name in DISCRIMINATORS}

    fake_y = _translate(state, params, "G", tape.constant(x), swaps_x)
    fake_x = _translate(state, params, "F", tape.constant(y), swaps_y)
    adv_G = _checked("adv_G", losses.generator_adversarial_loss(discriminate(state.nets["D_Y"], d_params["D_Y"], fake_y)))
    adv_F = _checked("adv_F", losses.generator_adversarial_loss(discriminate(state.nets["D_X"], d_params["D_X"], fake_x)))

    rec_x = _translate(state, params, "F", fake_y, _fake_swaps(state, config, "F", fake_y.value, ref_x))
    rec_y = _translate(state, params, "G", fake_x, _fake_swaps(state, config, "G", fake_x.value, ref_y))
    cyc = _checked("cyc", losses.cycle_loss(x, rec_x, y, rec_y))

    tex_G = _checked("tex_G", _texture_term(state, tape, fake_y, tex_x))
    tex_F = _checked("tex_F", _texture_term(state, tape, fake_x, swaps_y))
    total = _checked("total", losses.total_objective(adv_G, adv_F, cyc, tex_G, tex_F, config.weights))

    report = LossReport(float(adv_G), float(adv_F), float(cyc), float(tex_G), float(tex_F), float(total))
    return report, tape.backward(total)


def _as_batch(images) -> List[np.ndarray]:
    if isinstance(images, np.ndarray) and images.ndim == 3:
        return [images]
    return list(images)


def train_step(
    state: TrainState,
    x,
    y,
    ref_y: Sequence[np.ndarray],
    ref_x: Sequence[np.ndarray],
    config: TrainConfig,
    lr: Optional[float] = None,
    keys: Optional[Sequence[Tuple[tuple, tuple]]] = None,
    ref_keys: Optional[Tuple[Sequence, Sequence]] = None,
) -> LossReport:
    """One discriminator update then one generator update.

    ``x``/``y`` are single images or equally long batches; gradients are
    averaged over the batch.  ``keys`` gives per-sample cache keys
    ``(x key, y key)`` and ``ref_keys`` gives ``(ref_y keys, ref_x keys)``;
    either may be omitted to disable that cache.  Reference pyramids are
    built at most once per step either way.
    """
    xs, ys = _as_batch(x), _as_batch(y)
    if len(xs) != len(ys) or not xs:
        raise DataError(f"batch sizes differ: {len(xs)} X images, {len(ys)} Y images")
    if not len(ref_x) or not len(ref_y):
        raise UsageError("training needs at least one reference image per domain")
    lr = config.lr_at(0) if lr is None else lr
    scale = 1.0 / len(xs)
    keys_y, keys_x = ref_keys if ref_keys is not None else (None, None)
    ref_y = reference_set(state, config, ref_y, keys_y)
    ref_x = reference_set(state, config, ref_x, keys_x)

    samples = []
    for i, (xi, yi) in enumerate(zip(xs, ys)):
        kx, ky = keys[i] if keys is not None else (None, None)
        swaps_x = _real_swaps(state, config, xi, ref_y, kx)
        swaps_y = _real_swaps(state, config, encoder_view(state, "F", yi), ref_x, ky)
        tex_x = swaps_x
        if state.scale_factor == 2:
            # G's texture loss compares at output size
            h, w = xi.shape[1:]
            tex_x = _real_swaps(state, config, bicubic_resize(xi, 2 * h, 2 * w), ref_y,
                                 None if kx is None else kx + ("upscaled",))
        samples.append((xi, yi, swaps_x, swaps_y, tex_x, ref_x, ref_y))

    d_grads: Dict = {}
    disc = 0.0
    for xi, yi, swaps_x, swaps_y, _, _, _ in samples:
        fake_y = generate_value(state, "G", xi, swaps_x)
        fake_x = generate_value(state, "F", yi, swaps_y)
        value, grads = _discriminator_pass(state, xi, yi, fake_x, fake_y)
        disc += value * scale
        _accumulate(d_grads, grads, scale)
    state.opt_disc.step(_owned(state, DISCRIMINATORS), d_grads, lr)

    g_grads: Dict = {}
    reports = []
    for sample in samples:
        report, grads = _generator_pass(state, config, sample)
        reports.append(report)
        _accumulate(g_grads, grads, scale)
    state.opt_gen.step(_owned(state, GENERATORS), g_grads, lr)
    state.step += 1

    mean = {f: float(np.mean([getattr(r, f) for r in reports])) for f in ("adv_G", "adv_F", "cyc", "tex_G", "tex_F", "total")}
    return LossReport(disc=disc, **mean)


def _owned(state: TrainState, names) -> Dict[tuple, np.ndarray]:
    return {(name, key): value for name in names for key, value in state.nets[name].params.items()}


def generate_value(state: TrainState, name: str, image: np.ndarray, swaps) -> np.ndarray:
    tape = ag.Tape()
    params = {name: state.nets[name].on_tape(tape)}
    return _translate(state, params, name, tape.constant(image), swaps).value


# ============================================================
# Full run
# ============================================================

@dataclasses.dataclass
class TrainResult:
    metrics_csv: Path
    checkpoints: List[Path]
    rows: List[Dict[str, float]]
    state: TrainState
    val_refs: List[np.ndarray]


def _ensure_writable(out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        fd, scratch = tempfile.mkstemp(prefix=".writable.", dir=out_dir)
        os.close(fd)
        os.unlink(scratch)
    except OSError as exc:
        raise DataError(f"output directory {out_dir} is not writable: {exc}")


def sample_references(rng: np.random.Generator, pool_size: int, count: int) -> Tuple[int, ...]:
    picked = rng.choice(pool_size, size=min(count, pool_size), replace=False)
    return tuple(sorted(int(i) for i in picked))


def validation_rows(
    state: TrainState, config: TrainConfig, corpus: ToyCorpus, refs: Sequence[Union[np.ndarray, ReferencePyramids]]
) -> List[MetricRow]:
    """Metrics of G(x) against the retained paired ground truth."""
    refs = [ref if isinstance(ref, ReferencePyramids) else reference_set(state, config, [ref])[0] for ref in refs]
    rows = []
    for i, (x, target) in enumerate(zip(corpus.val_x, corpus.val_y)):
        swaps = _real_swaps(state, config, x, refs, ("val", i))
        rows.append(evaluate_pair(f"val{i:04d}", generate_value(state, "G", x, swaps), target))
    return rows


def validate(state: TrainState, config: TrainConfig, corpus: ToyCorpus, refs) -> Tuple[float, float]:
    """Mean validation PSNR and SSIM; infinite PSNR values are skipped."""
    rows = validation_rows(state, config, corpus, refs)
    if not rows:
        return math.nan, math.nan
    finite = [r.psnr for r in rows if math.isfinite(r.psnr)]
    return (float(np.mean(finite)) if finite else math.inf), float(np.mean([r.ssim for r in rows]))


def _write_csv(path: Path, rows: List[Dict[str, float]]) -> None:
    lines = [CSV_COLUMNS] + [[str(row["epoch"])] + [fmt(row[c]) for c in CSV_COLUMNS[1:]] for row in rows]
    atomic_write_bytes(path, csv_text(lines).encode("utf-8"))


def _check_corpus_scale(corpus: ToyCorpus, scale_factor: int) -> None:
    x_shape = corpus.x_train[0].shape
    expected = (x_shape[0], x_shape[1] * scale_factor, x_shape[2] * scale_factor)
    for pool, images, want in (("X", corpus.x_train + corpus.val_x, x_shape), ("Y", corpus.y_train + corpus.val_y, expected)):
        for image in images:
            if image.shape != want:
                raise DataError(f"{pool} image of shape {image.shape}, expected {want} for scale factor {scale_factor}")


def run_training(
    config: TrainConfig,
    corpus: Union[ToyCorpus, ToyDomainSpec, None],
    out_dir,
) -> TrainResult:
    out_dir = Path(out_dir)
    _ensure_writable(out_dir)
    if corpus is None or isinstance(corpus, ToyDomainSpec):
        corpus = generate_corpus(corpus or ToyDomainSpec(seed=config.seed, scale_factor=config.scale_factor))
    _check_corpus_scale(corpus, config.scale_factor)

    state = init_state(config, corpus.x_train[0].shape[0])
    n_x, n_y = len(corpus.x_train), len(corpus.y_train)
    steps = config.steps_per_epoch or math.ceil(n_x / config.batch_size)
    # one fixed reference sample per training image, drawn once per run
    ref_rng = np.random.default_rng(config.seed)
    refs_for_x = [sample_references(ref_rng, n_y, config.num_references) for _ in range(n_x)]
    refs_for_y = [sample_references(ref_rng, n_x, config.num_references) for _ in range(n_y)]
    val_picks = sample_references(ref_rng, n_y, config.num_references)
    val_refs = [corpus.y_train[i] for i in val_picks]
    val_pyramids = reference_set(state, config, val_refs, [("Y", i) for i in val_picks])

    checkpoints = [out_dir / "epoch_0000.ntx1"]
    write_ntx1(state.to_sections(), checkpoints[0])
    logger.info("Training %s for %d epochs (%d steps/epoch), seed %d", config.mode, config.epochs, steps, config.seed)

    rows: List[Dict[str, float]] = []
    csv_path = out_dir / "metrics.csv"
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order_x = state.rng.permutation(n_x)
        order_y = state.rng.permutation(n_y)
        reports = []
        for s in range(steps):
            picks = [(int(order_x[(s * config.batch_size + b) % n_x]), int(order_y[(s * config.batch_size + b) % n_y]))
                     for b in range(config.batch_size)]
            ry, rx = refs_for_x[picks[0][0]], refs_for_y[picks[0][1]]
            keys = [(("X", ix, ry), ("Y", iy, rx)) for ix, iy in picks]
            reports.append(
                train_step(
                    state,
                    [corpus.x_train[ix] for ix, _ in picks],
                    [corpus.y_train[iy] for _, iy in picks],
                    [corpus.y_train[i] for i in ry],
                    [corpus.x_train[i] for i in rx],
                    config,
                    lr=lr,
                    keys=keys,
                    ref_keys=([("Y", i) for i in ry], [("X", i) for i in rx]),
                )
            )

        row = {"epoch": epoch, "lr": lr}
        for field in ("adv_G", "adv_F", "cyc", "tex_G", "tex_F", "total"):
            row[field] = float(np.mean([getattr(r, field) for r in reports]))
        row["val_psnr"], row["val_ssim"] = validate(state, config, corpus, val_pyramids)
        rows.append(row)
        logger.info(
            "epoch %d lr=%.3g total=%.5g cyc=%.5g val_psnr=%.4g",
            epoch, lr, row["total"], row["cyc"], row["val_psnr"],
        )
        logger.debug(
            "swap cache: %d hits, %d misses; %d reference pyramids",
            state.cache.hits, state.cache.misses, state.pyramids.misses,
        )

        if (epoch + 1) % config.checkpoint_every == 0:
            path = out_dir / f"epoch_{epoch + 1:04d}.ntx1"
            write_ntx1(state.to_sections(), path)
            checkpoints.append(path)
            logger.info("Checkpoint written: %s", path)
        _write_csv(csv_path, rows)

    _write_csv(csv_path, rows)
    if config.epochs >= 1:
        final = out_dir / "final.ntx1"
        write_ntx1(state.to_sections(), final)
        checkpoints.append(final)
        logger.info("Final model written: %s", final)
    return TrainResult(csv_path, checkpoints, rows, state, val_refs)
