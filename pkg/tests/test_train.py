"""Optimizer oracle, fit determinism, checkpointing, and split hygiene."""

import numpy as np
import pytest
import torch

from kdseg.data import DatasetManifest
from kdseg.distill import CorruptingTeacher, generate_pseudo_labels
from kdseg.errors import ConfigError, TrainingError
from kdseg.model import UNetSpec, build_student, forward, load_checkpoint
from kdseg.losses import LossConfig
from kdseg.train import (
    AugmentConfig,
    OptimizerConfig,
    TrainConfig,
    TrainReport,
    _ShuffleQueue,
    fit,
    rmsprop_step,
)


class TestRmspropStep:
    def test_scalar_oracle(self):
        params = {"w": torch.tensor([1.0], dtype=torch.float64)}
        grads = {"w": torch.tensor([1.0], dtype=torch.float64)}
        state = {}
        rmsprop_step(params, grads, state, OptimizerConfig())
        assert state["w"].item() == pytest.approx(0.1, abs=1e-12)
        expected = 1.0 - 0.001 / (np.sqrt(0.1) + 1e-7)
        assert params["w"].item() == pytest.approx(expected, abs=1e-9)

    def test_zero_gradient_decays_state_only(self):
        params = {"w": torch.tensor([2.0], dtype=torch.float64)}
        grads = {"w": torch.tensor([0.0], dtype=torch.float64)}
        state = {"w": torch.tensor([0.5], dtype=torch.float64)}
        rmsprop_step(params, grads, state, OptimizerConfig())
        assert params["w"].item() == 2.0
        assert state["w"].item() == pytest.approx(0.45, abs=1e-12)  # rho * v

    def test_matches_reference_elementwise(self, rng):
        cfg = OptimizerConfig(learning_rate=0.01, rho=0.85, epsilon=1e-6)
        shapes = [(3,), (2, 4), (2, 3, 2)]
        params = {
            f"p{i}": torch.from_numpy(rng.normal(size=s)) for i, s in enumerate(shapes)
        }
        ref = {k: v.numpy().copy() for k, v in params.items()}
        ref_v = {k: np.zeros_like(v) for k, v in ref.items()}
        state = {}
        for _ in range(5):
            grads = {
                k: torch.from_numpy(rng.normal(size=v.shape).copy())
                for k, v in ref.items()
            }
            rmsprop_step(params, grads, state, cfg)
            for k in ref:
                g = grads[k].numpy()
                ref_v[k] = cfg.rho * ref_v[k] + (1 - cfg.rho) * g * g
                ref[k] = ref[k] - cfg.learning_rate * g / (np.sqrt(ref_v[k]) + cfg.epsilon)
        for k in ref:
            np.testing.assert_allclose(params[k].numpy(), ref[k], atol=1e-12)

    def test_nonfinite_gradient_named(self):
        params = {"conv.weight": torch.tensor([1.0])}
        grads = {"conv.weight": torch.tensor([float("nan")])}
        with pytest.raises(TrainingError) as err:
            rmsprop_step(params, grads, {}, OptimizerConfig())
        assert "conv.weight" in str(err.value)

    def test_missing_grad_skipped(self):
        params = {"w": torch.tensor([1.0]), "frozen": torch.tensor([5.0])}
        grads = {"w": torch.tensor([1.0])}
        rmsprop_step(params, grads, {}, OptimizerConfig())
        assert params["frozen"].item() == 5.0

    @pytest.mark.parametrize(
        "kwargs",
        [{"learning_rate": 0.0}, {"rho": 1.0}, {"epsilon": 0.0}, {"lr_decay": 0.0}],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigError):
            OptimizerConfig(**kwargs)


class TestShuffleQueue:
    def test_covers_everything_before_repeating(self):
        q = _ShuffleQueue(5, np.random.default_rng(0))
        drawn = q.draw(5)
        assert sorted(drawn) == [0, 1, 2, 3, 4]

    def test_deterministic(self):
        a = _ShuffleQueue(7, np.random.default_rng(3)).draw(20)
        b = _ShuffleQueue(7, np.random.default_rng(3)).draw(20)
        assert a == b


def _pseudo_labeled(toy_dataset, tmp_path, count=10, seed=0, drop=0.0):
    manifest = toy_dataset(count=count, seed=seed)
    teacher = CorruptingTeacher(tmp_path / "data" / "labels", drop, seed=seed)
    return generate_pseudo_labels(teacher, manifest)


def _small_cfg(tmp_path, **overrides):
    base = dict(
        epochs=2,
        steps_per_epoch=2,
        batch_size=4,
        seed=0,
        loss=LossConfig(lambda_consistency=0.1),
        checkpoint_dir=tmp_path / "ckpt",
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestFit:
    def test_step_accounting(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        report = fit(model, manifest, _small_cfg(tmp_path, epochs=3, steps_per_epoch=4))
        assert report.optimizer_steps == 12
        assert len(report.train_loss) == 3
        assert len(report.val_loss) == 3
        assert len(report.val_dice) == 3

    def test_full_pass_mode(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        n_train = len(manifest.split("train"))
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        cfg = _small_cfg(tmp_path, epochs=1, steps_per_epoch=None, batch_size=4)
        report = fit(model, manifest, cfg)
        assert report.optimizer_steps == int(np.ceil(n_train / 4))

    def test_determinism(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        reports = []
        for run in range(2):
            model = build_student(UNetSpec(depth=2, base_channels=4), seed=1)
            cfg = _small_cfg(tmp_path, checkpoint_dir=tmp_path / f"ckpt{run}", seed=1)
            reports.append(fit(model, manifest, cfg))
        # wall-clock and checkpoint paths are excluded from report equality
        assert reports[0] == reports[1]

    def test_empty_train_split(self, tmp_path):
        manifest = DatasetManifest(root=str(tmp_path), records=[])
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        with pytest.raises(ConfigError):
            fit(model, manifest, TrainConfig(epochs=1))

    def test_best_checkpoint_written_and_loadable(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        report = fit(model, manifest, _small_cfg(tmp_path))
        assert report.best_checkpoint is not None
        loaded, _, epoch = load_checkpoint(report.best_checkpoint)
        assert epoch == report.best_epoch
        x = np.zeros((1, 16, 16, 3), dtype=np.float32)
        assert forward(loaded, x).shape == (1, 16, 16)

    def test_validation_interval(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        cfg = _small_cfg(tmp_path, epochs=4, validation_interval=2)
        report = fit(model, manifest, cfg)
        assert [v is None for v in report.val_dice] == [True, False, True, False]

    def test_never_reads_test_split(self, toy_dataset, tmp_path, monkeypatch):
        # test-split files are deleted outright: fit must not notice
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        for record in manifest.split("test"):
            manifest.image_path(record).unlink()
        requested = []
        original = DatasetManifest.split

        def spying_split(self, name):
            requested.append(name)
            return original(self, name)

        monkeypatch.setattr(DatasetManifest, "split", spying_split)
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        fit(model, manifest, _small_cfg(tmp_path))
        assert "test" not in requested

    def test_nonfinite_loss_aborts_with_checkpoint(self, toy_dataset, tmp_path):
        manifest = _pseudo_labeled(toy_dataset, tmp_path)
        model = build_student(UNetSpec(depth=2, base_channels=4), seed=0)
        # a poisoned parameter turns every prediction into NaN
        with torch.no_grad():
            model.net.head.weight.fill_(float("nan"))
        with pytest.raises(TrainingError):
            fit(model, manifest, _small_cfg(tmp_path))
        assert (tmp_path / "ckpt" / "aborted.pt").exists()

    def test_overfit_single_sample(self, toy_dataset, tmp_path):
        # one training record, consistency off: loss falls, Dice saturates
        manifest = _pseudo_labeled(toy_dataset, tmp_path, count=10, drop=0.0)
        one_train = [r for r in manifest.records if r.split == "train"][:1]
        others = [r for r in manifest.records if r.split != "train"]
        small = DatasetManifest(root=manifest.root, records=one_train + others)
        model = build_student(UNetSpec(depth=2, base_channels=8), seed=0)
        cfg = TrainConfig(
            epochs=30,
            steps_per_epoch=4,
            batch_size=1,
            seed=0,
            loss=LossConfig(lambda_consistency=0.0),
            augment_enabled=False,
            checkpoint_dir=None,
        )
        report = fit(model, small, cfg)
        assert report.train_loss[5] < report.train_loss[0]
        from kdseg.data import load_label_as_binary, load_patch
        from kdseg.metrics import confusion, dice

        record = one_train[0]
        patch = load_patch(small.image_path(record))
        truth = load_label_as_binary(small.label_path(record))
        probs = forward(model, [patch])[0]
        final = dice(confusion((probs >= 0.5).astype(np.uint8), truth.pixels))
        assert final > 0.9


class TestReport:
    def test_save_round_trip(self, tmp_path):
        report = TrainReport(
            train_loss=[0.5, 0.4],
            val_loss=[0.6, None],
            val_dice=[0.7, None],
            best_epoch=0,
            best_val_dice=0.7,
            optimizer_steps=8,
            epoch_seconds=[0.1, 0.2],
        )
        report.save(tmp_path / "report.json")
        import json

        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["train_loss"] == [0.5, 0.4]
        assert payload["val_dice"] == [0.7, None]

    def test_equality_ignores_wall_clock(self):
        a = TrainReport(train_loss=[1.0], epoch_seconds=[1.0])
        b = TrainReport(train_loss=[1.0], epoch_seconds=[2.0])
        assert a == b


class TestAugmentConfig:
    def test_validates_axis_names(self):
        from kdseg.errors import TransformError

        with pytest.raises(TransformError):
            AugmentConfig(transforms=("sideways",))

    def test_p_identity_range(self):
        with pytest.raises(ConfigError):
            AugmentConfig(p_identity=1.5)
