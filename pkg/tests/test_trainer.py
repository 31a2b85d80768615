import dataclasses
import math

import numpy as np
import pytest

from ntg import trainer
from ntg.errors import DataError, NumericError, UsageError
from ntg.formats import read_ntx1
from ntg.toydata import ToyDomainSpec, generate_corpus
from ntg.trainer import (
    CSV_COLUMNS,
    MODES,
    KeyedCache,
    TrainConfig,
    generate_value,
    init_state,
    run_training,
    sample_references,
    train_step,
    validation_rows,
)

TINY = ToyDomainSpec(image_size=16, train_per_domain=4, val_pairs=2, seed=0)
TINY_SR = dataclasses.replace(TINY, scale_factor=2)
REF_KEYS = ([("Y", 1), ("Y", 2)], [("X", 1), ("X", 2)])


def tiny_config(**overrides):
    base = TrainConfig(epochs=1, levels=2, num_references=2, steps_per_epoch=1, checkpoint_every=1)
    return dataclasses.replace(base, **overrides)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(TINY)


def step_args(corpus):
    return corpus.x_train[0], corpus.y_train[0], corpus.y_train[1:3], corpus.x_train[1:3]


def snapshot(state):
    return {(n, k): v.copy() for n, net in state.nets.items() for k, v in net.params.items()}


class TestTrainConfig:
    def test_learning_rate_schedule(self):
        config = TrainConfig()
        assert [config.lr_at(e) for e in (0, 49)] == [2e-4, 2e-4]
        assert [config.lr_at(e) for e in (50, 99)] == [1e-4, 1e-4]
        assert config.lr_at(100) == 5e-5

    def test_texture_levels_per_mode(self):
        assert TrainConfig().texture_levels() == [1, 2, 3]
        assert TrainConfig(mode="single_scale_texture").texture_levels() == [1]
        assert TrainConfig(mode="no_texture").texture_levels() == []

    @pytest.mark.parametrize("kwargs", [{"mode": "fast"}, {"batch_size": 0}, {"epochs": -1}, {"levels": 1},
                                        {"lr_halving_period": 0}, {"checkpoint_every": 0},
                                        {"scale_factor": 3}])
    def test_invalid(self, kwargs):
        with pytest.raises(UsageError):
            TrainConfig(**kwargs)


class TestTrainStep:
    def test_zero_learning_rate_keeps_parameters(self, corpus):
        config = tiny_config()
        state = init_state(config)
        before = snapshot(state)
        report = train_step(state, *step_args(corpus), config, lr=0.0)
        for key, value in snapshot(state).items():
            assert np.array_equal(value, before[key]), key
        assert np.isfinite(report.total)
        assert report.tex_G > 0.0

    def test_parameters_move_with_positive_rate(self, corpus):
        config = tiny_config()
        state = init_state(config)
        before = snapshot(state)
        train_step(state, *step_args(corpus), config)
        moved = [key for key, value in snapshot(state).items() if not np.array_equal(value, before[key])]
        assert {key[0] for key in moved} == {"G", "F", "D_X", "D_Y"}

    def test_deterministic(self, corpus):
        config = tiny_config()
        reports = []
        for _ in range(2):
            state = init_state(config)
            reports.append([train_step(state, *step_args(corpus), config) for _ in range(2)])
        assert reports[0] == reports[1]

    def test_no_texture_mode_has_zero_texture_terms(self, corpus):
        config = tiny_config(mode="no_texture")
        report = train_step(init_state(config), *step_args(corpus), config)
        assert report.tex_G == report.tex_F == 0.0

    def test_single_scale_mode_uses_finest_level(self, corpus):
        config = tiny_config(mode="single_scale_texture")
        report = train_step(init_state(config), *step_args(corpus), config)
        assert report.tex_G > 0.0

    def test_real_swaps_are_cached(self, corpus):
        config = tiny_config()
        state = init_state(config)
        keys = [(("X", 0, (1, 2)), ("Y", 0, (1, 2)))]
        for _ in range(2):
            train_step(state, *step_args(corpus), config, keys=keys)
        assert (state.cache.misses, state.cache.hits) == (2, 2)

    def test_reference_pyramids_are_cached(self, corpus):
        config = tiny_config()
        state = init_state(config)
        reports = [train_step(state, *step_args(corpus), config, ref_keys=REF_KEYS) for _ in range(2)]
        assert (state.pyramids.misses, state.pyramids.hits) == (4, 4)
        fresh = init_state(config)
        assert reports == [train_step(fresh, *step_args(corpus), config) for _ in range(2)]

    def test_reference_pyramids_built_once_per_step(self, corpus, monkeypatch):
        built = []
        original = trainer.reference_pyramids
        monkeypatch.setattr(trainer, "reference_pyramids", lambda *args: built.append(1) or original(*args))
        config = tiny_config()
        train_step(init_state(config), *step_args(corpus), config)
        assert len(built) == 4

    def test_reference_key_count_must_match(self, corpus):
        config = tiny_config()
        with pytest.raises(UsageError):
            train_step(init_state(config), *step_args(corpus), config, ref_keys=([("Y", 1)], REF_KEYS[1]))

    def test_batch_of_two(self, corpus):
        config = tiny_config(batch_size=2)
        report = train_step(init_state(config), corpus.x_train[:2], corpus.y_train[:2],
                            corpus.y_train[2:], corpus.x_train[2:], config)
        assert np.isfinite(report.total)

    def test_mismatched_batches(self, corpus):
        config = tiny_config()
        with pytest.raises(DataError):
            train_step(init_state(config), corpus.x_train[:2], corpus.y_train[:1], corpus.y_train, corpus.x_train, config)

    def test_references_required(self, corpus):
        config = tiny_config()
        with pytest.raises(UsageError):
            train_step(init_state(config), corpus.x_train[0], corpus.y_train[0], [], corpus.x_train[1:], config)

    def test_non_finite_discriminator_names_term(self, corpus):
        config = tiny_config()
        state = init_state(config)
        state.nets["D_Y"].params["score.bias"][:] = np.nan
        with pytest.raises(NumericError) as excinfo:
            train_step(state, *step_args(corpus), config)
        assert excinfo.value.term == "D_Y"


class TestKeyedCache:
    def test_none_key_bypasses(self):
        cache = KeyedCache()
        calls = []
        for _ in range(2):
            cache.get(None, lambda: calls.append(1) or [])
        assert len(calls) == 2
        assert cache.hits == cache.misses == 0


class TestSuperResolution:
    @pytest.fixture(scope="class")
    def sr_corpus(self):
        return generate_corpus(TINY_SR)

    def test_corpus_halves_x_images(self, sr_corpus):
        assert {img.shape for img in sr_corpus.x_train + sr_corpus.val_x} == {(1, 8, 8)}
        assert {img.shape for img in sr_corpus.y_train + sr_corpus.val_y} == {(1, 16, 16)}

    def test_one_step(self, sr_corpus):
        config = tiny_config(scale_factor=2)
        state = init_state(config)
        before = snapshot(state)
        report = train_step(state, *step_args(sr_corpus), config)
        assert np.isfinite(report.total)
        assert report.tex_G > 0.0 and report.tex_F > 0.0
        moved = {key[0] for key, value in snapshot(state).items() if not np.array_equal(value, before[key])}
        assert moved == {"G", "F", "D_X", "D_Y"}
        assert generate_value(state, "G", sr_corpus.x_train[0], []).shape == (1, 16, 16)
        assert generate_value(state, "F", sr_corpus.y_train[0], []).shape == (1, 8, 8)

    def test_one_epoch_run(self, tmp_path, sr_corpus):
        result = run_training(tiny_config(scale_factor=2), sr_corpus, tmp_path)
        assert result.state.nets["G"].meta["scale_factor"] == (2,)
        assert math.isfinite(result.rows[0]["val_ssim"])

    def test_same_size_corpus_rejected(self, tmp_path, corpus):
        with pytest.raises(DataError):
            run_training(tiny_config(scale_factor=2), corpus, tmp_path)


class TestSampleReferences:
    def test_sorted_unique(self):
        picked = sample_references(np.random.default_rng(0), 10, 4)
        assert list(picked) == sorted(set(picked))
        assert len(picked) == 4

    def test_small_pool(self):
        assert sample_references(np.random.default_rng(0), 2, 4) == (0, 1)


class TestRunTraining:
    def test_zero_epochs(self, tmp_path, corpus):
        result = run_training(tiny_config(epochs=0), corpus, tmp_path)
        assert [p.name for p in result.checkpoints] == ["epoch_0000.ntx1"]
        assert result.metrics_csv.read_text(encoding="utf-8") == ",".join(CSV_COLUMNS) + "\n"
        assert not (tmp_path / "final.ntx1").exists()

    def test_one_epoch_outputs(self, tmp_path, corpus):
        result = run_training(tiny_config(), corpus, tmp_path)
        assert [p.name for p in result.checkpoints] == ["epoch_0000.ntx1", "epoch_0001.ntx1", "final.ntx1"]
        lines = result.metrics_csv.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        fields = lines[1].split(",")
        assert fields[:2] == ["0", "0.0002"]
        assert len(fields) == len(CSV_COLUMNS)
        prefixes = {name.split(".")[0] for name in read_ntx1(tmp_path / "final.ntx1")}
        assert prefixes == {"featnet", "G", "F", "D_X", "D_Y"}

    def test_unpaired_contract(self, tmp_path, corpus):
        scrambled = dataclasses.replace(corpus, val_y=[1.0 - img for img in corpus.val_y])
        config = tiny_config(epochs=2)
        a = run_training(config, corpus, tmp_path / "a")
        b = run_training(config, scrambled, tmp_path / "b")
        for row_a, row_b in zip(a.rows, b.rows):
            assert [row_a[c] for c in CSV_COLUMNS[:8]] == [row_b[c] for c in CSV_COLUMNS[:8]]
        assert (tmp_path / "a" / "final.ntx1").read_bytes() == (tmp_path / "b" / "final.ntx1").read_bytes()

    def test_unwritable_output(self, tmp_path, corpus):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError):
            run_training(tiny_config(), corpus, blocker / "out")

    def test_generates_corpus_from_spec(self, tmp_path):
        result = run_training(tiny_config(epochs=0), TINY, tmp_path)
        assert result.state.nets["G"].meta["levels"] == (2,)

    @pytest.mark.slow
    def test_ten_steps_reduce_total_loss(self):
        corpus = generate_corpus(ToyDomainSpec())
        improved = 0
        for seed in range(10):
            config = TrainConfig(seed=seed)
            state = init_state(config)
            rng = np.random.default_rng(seed)
            refs_y = [corpus.y_train[i] for i in sample_references(rng, 64, 4)]
            refs_x = [corpus.x_train[i] for i in sample_references(rng, 64, 4)]
            totals = [train_step(state, corpus.x_train[s], corpus.y_train[s], refs_y, refs_x, config).total
                      for s in range(10)]
            improved += totals[-1] < totals[0]
        assert improved >= 8

    @pytest.mark.slow
    @pytest.mark.parametrize("mode", ["no_texture", "single_scale_texture", "full"])
    def test_cycle_loss_falls_over_full_schedule(self, tmp_path, mode):
        result = run_training(TrainConfig(mode=mode), None, tmp_path)
        assert result.rows[-1]["cyc"] < 0.2 * result.rows[0]["cyc"]

    @pytest.mark.slow
    def test_texture_modes_rank_on_validation(self, tmp_path):
        corpus = generate_corpus(ToyDomainSpec())
        ordered = 0
        for seed in (0, 1, 2):
            psnr, ssim = {}, {}
            for mode in MODES:
                config = TrainConfig(mode=mode, seed=seed)
                result = run_training(config, corpus, tmp_path / f"{mode}_{seed}")
                rows = validation_rows(result.state, config, corpus, result.val_refs)
                psnr[mode] = np.mean([r.psnr for r in rows if math.isfinite(r.psnr)])
                ssim[mode] = np.mean([r.ssim for r in rows])
            ordered += (
                psnr["full"] >= psnr["single_scale_texture"]
                and psnr["full"] >= psnr["no_texture"]
                and ssim["full"] >= ssim["no_texture"]
            )
        assert ordered >= 2
