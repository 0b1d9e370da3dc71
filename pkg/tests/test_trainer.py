import math

import numpy as np
import pytest

from zrudc import checkpoint as ck
from zrudc.gridnet import GridNetConfig, init_params
from zrudc.imageio import ImageRGB, save_image
from zrudc.losses import LossWeights
from zrudc.synthetic import DegradeConfig, clean_scene, degrade, seeded_rng
from zrudc.trainer import (
    AdamState,
    EmptyDatasetError,
    TrainConfig,
    TrainingDivergedError,
    ablate,
    adam_step,
    dataset_paths,
    format_ablation,
    random_crop,
    train,
)

FAST = TrainConfig(widths=(2, 4), proxy_size=16, crop=16, batch_size=2, epochs=2)


def corpus(n=3, size=24):
    return [degrade(clean_scene(size, size, seeded_rng(0, i)), DegradeConfig(seed=i)) for i in range(n)]


class TestAdam:
    def test_first_step_moves_by_lr(self):
        cfg = TrainConfig(lr=0.002)
        p = {"w": np.array([1.0, -2.0, 3.0])}
        g = {"w": np.array([0.5, -7.0, 1e-3])}
        new, state = adam_step(p, g, AdamState.zeros_like(p), cfg)
        # bias correction makes the first update lr * sign(g) (up to epsilon)
        np.testing.assert_allclose(new["w"], p["w"] - 0.002 * np.sign(g["w"]), rtol=0, atol=1e-7)
        assert state.step == 1

    def test_matches_closed_form_two_steps(self):
        cfg = TrainConfig(lr=0.1, beta1=0.9, beta2=0.999, epsilon=1e-8)
        p = {"w": np.array([0.0])}
        s = AdamState.zeros_like(p)
        p1, s = adam_step(p, {"w": np.array([1.0])}, s, cfg)
        p2, s = adam_step(p1, {"w": np.array([3.0])}, s, cfg)
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        m_hat, v_hat = m / (1 - 0.9**2), v / (1 - 0.999**2)
        expected = p1["w"][0] - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert p2["w"][0] == pytest.approx(expected, rel=1e-12)

    def test_zero_gradient_leaves_params(self):
        p = {"w": np.ones(4)}
        new, _ = adam_step(p, {"w": np.zeros(4)}, AdamState.zeros_like(p), TrainConfig())
        np.testing.assert_array_equal(new["w"], p["w"])

    def test_minimises_quadratic(self):
        cfg = TrainConfig(lr=0.05)
        p = {"w": np.array([2.0, -1.5])}
        s = AdamState.zeros_like(p)
        for _ in range(500):
            p, s = adam_step(p, {"w": 2 * p["w"]}, s, cfg)
        assert np.all(np.abs(p["w"]) < 0.05)

    def test_shape_mismatch(self):
        p = {"w": np.ones(3)}
        with pytest.raises(ValueError):
            adam_step(p, {"w": np.ones(4)}, AdamState.zeros_like(p), TrainConfig())


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.epochs) == (0.002, 0.9, 0.999, 1e-8, 100)

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"beta1": 1.0}, {"batch_size": 0}, {"epochs": 0}, {"pool_kernel": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestData:
    def test_dataset_paths_sorted_and_filtered(self, tmp_path):
        for name in ("b.png", "a.ppm", "c.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in dataset_paths(tmp_path)] == ["a.ppm", "b.png"]

    def test_empty_dir(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            dataset_paths(tmp_path)
        with pytest.raises(EmptyDatasetError):
            train([], FAST)

    def test_crop_size(self, rng):
        img = ImageRGB(rng.random((3, 20, 30)))
        assert random_crop(img, 16, rng).shape == (3, 16, 16)
        assert random_crop(img, 64, rng).shape == (3, 20, 30)


class TestTrain:
    def test_deterministic(self):
        imgs = corpus()
        a, b = train(imgs, FAST), train(imgs, FAST)
        assert a.step_totals == b.step_totals
        for k, v in a.params.arrays().items():
            np.testing.assert_array_equal(v, b.params.arrays()[k])

    def test_history_shape(self):
        result = train(corpus(), FAST)
        assert len(result.history) == 2 and len(result.step_totals) == 4
        assert all(np.isfinite(r.total) for r in result.history)

    def test_max_steps(self):
        result = train(corpus(), TrainConfig(**{**FAST.__dict__, "max_steps": 3}))
        assert len(result.step_totals) == 3

    def test_zero_weights_freeze_params(self):
        zero = LossWeights(w_dcp=0, w_lle=0, w_dbc=0)
        cfg = TrainConfig(**{**FAST.__dict__, "weights": zero})
        start = init_params(cfg.net_config, seed=cfg.seed)
        result = train(corpus(), cfg)
        assert all(r.total == 0.0 for r in result.history)
        for k, v in start.arrays().items():
            np.testing.assert_array_equal(result.params.arrays()[k], v)

    def test_nan_weight_names_term(self):
        cfg = TrainConfig(**{**FAST.__dict__, "weights": LossWeights(w_exp=float("nan"))})
        with pytest.raises(TrainingDivergedError, match="'exp'") as info:
            train(corpus(), cfg)
        assert info.value.term == "exp" and info.value.step == 1

    def test_loss_decreases(self):
        cfg = TrainConfig(**{**FAST.__dict__, "epochs": 15, "batch_size": 3})
        result = train(corpus(), cfg)
        assert np.mean(result.step_totals[-3:]) < result.step_totals[0]

    def test_from_directory(self, tmp_path):
        for i, img in enumerate(corpus(2)):
            save_image(img, tmp_path / f"{i}.png")
        assert len(train(tmp_path, FAST).history) == 2


class TestAblate:
    def test_rows_and_grid_sizes(self):
        cfg = TrainConfig(**{**FAST.__dict__, "proxy_size": 32, "epochs": 1})
        rows = ablate(corpus(2, 32), cfg, references=corpus(2, 32))
        assert [r.label for r in rows] == ["K=None", "K=3", "K=8", "K=16"]
        assert [r.grid_size for r in rows] == [(32, 32), (11, 11), (4, 4), (2, 2)]
        table = format_ablation(rows).splitlines()
        assert table[0] == "K grid loss psnr ssim" and len(table) == 5


class TestCheckpoint:
    def params(self):
        return init_params(GridNetConfig(widths=(2, 4), proxy_size=16), seed=4, head_scale=1.0)

    def test_round_trip(self, tmp_path):
        p = self.params()
        ck.save_checkpoint(p, tmp_path / "m.zrud")
        back = ck.load_checkpoint(tmp_path / "m.zrud", proxy_size=16)
        assert back.config == p.config and back.names() == p.names()
        for k, v in p.arrays().items():
            np.testing.assert_array_equal(back[k].data, v)

    def test_header_layout(self):
        blob = ck.encode({"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
        assert blob[:4] == b"ZRUD"
        assert blob[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert blob[12:14] == (1).to_bytes(2, "little") and blob[14:15] == b"a" and blob[15] == 2
        np.testing.assert_array_equal(np.frombuffer(blob[-24:], "<f4"), np.arange(6))

    def test_bad_magic(self):
        with pytest.raises(ck.BadMagicError):
            ck.decode(b"NOPE" + bytes(8))

    def test_version_mismatch(self):
        blob = bytearray(ck.encode({}))
        blob[4] = 2
        with pytest.raises(ck.VersionMismatchError):
            ck.decode(bytes(blob))

    def test_truncated(self):
        blob = ck.encode(self.params().arrays())
        for cut in (6, 20, len(blob) - 1):
            with pytest.raises(ck.TruncatedCheckpointError):
                ck.decode(blob[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(ck.CheckpointError):
            ck.decode(ck.encode({}) + b"\0")

    def test_wrong_parameter_set(self, tmp_path):
        arrays = self.params().arrays()
        del arrays["lowrank.slope"]
        (tmp_path / "m.zrud").write_bytes(ck.encode(arrays))
        with pytest.raises(ck.CheckpointError):
            ck.load_checkpoint(tmp_path / "m.zrud", proxy_size=16)
