import json

import numpy as np
import pytest

from volwarp.flows import RigidPose
from volwarp.losses import LossWeights
from volwarp.net import TbnModel, save_model
from volwarp.scenes import MultiViewSample, generate_shape, make_dataset, render_view
from volwarp.train import (
    AdamState,
    TrainConfig,
    adam_step,
    evaluate_l1,
    gradcheck_resampler,
    train,
)
from volwarp.volume import NumericError, VolumeError


def identity_scene(seed=1):
    """One scene whose two views are identical: the autoencoder task."""
    shape = generate_shape(seed, "box")
    pose = RigidPose(azimuth=45.0)
    image, mask = render_view(shape, pose, 32)
    return MultiViewSample(0, "box", shape, [(pose, image, mask), (pose, image, mask)])


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        params = {"w": np.full((3,), 0.25, dtype=np.float32)}
        state = AdamState()
        adam_step(params, {"w": np.zeros(3)}, state, TrainConfig())
        assert np.array_equal(params["w"], np.full((3,), 0.25, dtype=np.float32))
        assert state.step == 1

    def test_single_step_from_zero_state_closed_form(self):
        g = np.array([0.37, -0.02, 1.5])
        params = {"w": np.zeros(3, dtype=np.float32)}
        config = TrainConfig()
        adam_step(params, {"w": g}, AdamState(), config)
        expected = -config.learning_rate * g / (np.abs(g) + config.eps)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-5)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        g = np.array([0.37])
        config = TrainConfig()
        params = {"w": np.zeros(1, dtype=np.float32)}
        state = AdamState()
        prev = params["w"].astype(np.float64).copy()
        for _ in range(1000):
            prev = params["w"].astype(np.float64).copy()
            adam_step(params, {"w": g}, state, config)
        last_update = abs(float(params["w"][0] - prev[0]))
        assert abs(last_update - config.learning_rate) / config.learning_rate < 0.01

    def test_missing_gradient_treated_as_zero(self):
        params = {"w": np.ones(2, dtype=np.float32), "v": np.ones(2, dtype=np.float32)}
        adam_step(params, {"w": np.ones(2)}, AdamState(), TrainConfig())
        assert np.array_equal(params["v"], np.ones(2, dtype=np.float32))
        assert not np.array_equal(params["w"], np.ones(2, dtype=np.float32))

    def test_non_finite_gradient_aborts(self):
        params = {"w": np.zeros(2, dtype=np.float32)}
        with pytest.raises(NumericError, match="w"):
            adam_step(params, {"w": np.array([1.0, np.inf])}, AdamState(), TrainConfig())


class TestConfig:
    def test_defaults_echo_reference_weights(self):
        d = TrainConfig().to_dict()
        assert d["learning_rate"] == 2e-4
        assert (d["beta1"], d["beta2"], d["eps"]) == (0.9, 0.999, 1e-8)
        assert d["weights"] == {"perceptual": 5.0, "ssim": 10.0, "adversarial": 0.05, "mask": 10.0}

    def test_round_trip(self):
        config = TrainConfig(learning_rate=1e-3, steps=7, weights=LossWeights(ssim=2.0))
        back = TrainConfig.from_dict(config.to_dict())
        assert back.learning_rate == 1e-3 and back.steps == 7 and back.weights.ssim == 2.0

    def test_validation(self):
        with pytest.raises(VolumeError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(VolumeError):
            TrainConfig(max_inputs=0)

    def test_epochs_override_steps(self):
        scenes = make_dataset(seed=3, n_scenes=4, n_views=2)
        model = TbnModel.init(seed=0)
        log = train(model, scenes, TrainConfig(steps=99, epochs=2, batch_size=2, seed=0))
        assert len(log) == 4


class TestTrainLoop:
    def test_identity_overfit_strictly_decreases(self):
        model = TbnModel.init(seed=0)
        config = TrainConfig(
            steps=50,
            batch_size=1,
            max_inputs=1,
            seed=0,
            weights=LossWeights(perceptual=0, ssim=0, adversarial=0, mask=0),
        )
        log = train(model, [identity_scene()], config)
        totals = [entry["total"] for entry in log]
        assert all(b < a for a, b in zip(totals, totals[1:]))

    def test_same_seed_gives_identical_logs_and_checkpoints(self, tmp_path):
        scenes = make_dataset(seed=9, n_scenes=3, n_views=4)
        artifacts = []
        for run in ("a", "b"):
            model = TbnModel.init(seed=2)
            log = train(model, scenes, TrainConfig(steps=6, seed=11), log_path=tmp_path / f"{run}.jsonl")
            save_model(tmp_path / f"{run}.vbm", model)
            artifacts.append((log, (tmp_path / f"{run}.jsonl").read_bytes(), (tmp_path / f"{run}.vbm").read_bytes()))
        assert artifacts[0][0] == artifacts[1][0]
        assert artifacts[0][1] == artifacts[1][1]
        assert artifacts[0][2] == artifacts[1][2]

    def test_log_schema(self, tmp_path):
        model = TbnModel.init(seed=0)
        train(model, [identity_scene()], TrainConfig(steps=2, batch_size=1, seed=0), log_path=tmp_path / "log.jsonl")
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert len(lines) == 2
        entry = json.loads(lines[0])
        assert set(entry) == {"step", "L_R", "L_S", "L_M", "total"}

    def test_empty_dataset_rejected(self):
        with pytest.raises(VolumeError):
            train(TbnModel.init(seed=0), [], TrainConfig(steps=1))

    def test_early_stopping_on_plateau(self):
        scenes = make_dataset(seed=9, n_scenes=2, n_views=4)
        model = TbnModel.init(seed=0)
        config = TrainConfig(steps=40, seed=0, eval_every=2, patience=2, learning_rate=1e-12)
        log = train(model, scenes, config, heldout=scenes)
        assert len(log) < 40

    def test_evaluate_l1_prefers_matching_prediction(self):
        scene = identity_scene()
        model = TbnModel.init(seed=0)
        before = evaluate_l1(model, [scene], n_inputs=1)
        train(
            model,
            [scene],
            TrainConfig(steps=60, batch_size=1, max_inputs=1, seed=0,
                        weights=LossWeights(perceptual=0, ssim=0, adversarial=0, mask=0)),
        )
        after = evaluate_l1(model, [scene], n_inputs=1)
        assert after < before


class TestGradcheckHarness:
    def test_resampler_meets_tolerance(self):
        assert gradcheck_resampler(seed=0) < 1e-5
