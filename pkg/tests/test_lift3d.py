import numpy as np
import pytest

from poselift import autodiff as ad
from poselift import synth
from poselift.camera import CameraParams, project
from poselift.lift3d import (
    LiftNet,
    LiftNetConfig,
    PoseLifter,
    lifting_loss,
    smoothness_balance,
    supervised_loss,
)
from poselift.metrics import reprojection_rmse


@pytest.fixture(scope="module")
def clip():
    return synth.gen_motion(synth.MotionConfig(n_frames=15, seed=8))


@pytest.fixture(scope="module")
def cam(clip):
    return clip.camera


class TestLossDecomposition:
    def test_alpha_zero_reduces_to_data_terms(self, clip, cam):
        rng = np.random.default_rng(0)
        pred = clip.poses3d + rng.normal(0, 20, size=clip.poses3d.shape)
        total, terms = lifting_loss(
            ad.Tensor(pred), clip.poses2d, clip.conf, clip.poses3d, cam,
            frame_alphas=np.zeros(clip.n_frames),
        )
        assert float(terms["smooth2d"].data) == 0.0
        assert float(terms["smooth3d"].data) == 0.0
        expected = float(terms["reproj2d"].data) + float(terms["anchor3d"].data)
        assert float(total.data) == pytest.approx(expected, rel=1e-12)

    def test_prediction_equal_to_anchor_on_constant_clip(self, cam):
        base = synth.gen_motion(synth.MotionConfig(n_frames=8, seed=9))
        pose = np.tile(base.poses3d[4], (8, 1, 1))
        uv = np.tile(base.poses2d[4], (8, 1, 1))
        conf = np.ones((8, 25))
        total, terms = lifting_loss(ad.Tensor(pose), uv, conf, pose, cam)
        # Prediction matches the anchor on a constant clip: smoothness and
        # anchor vanish, only the anchor's own reprojection residual stays.
        assert float(terms["anchor3d"].data) == 0.0
        assert float(terms["smooth2d"].data) == pytest.approx(0.0, abs=1e-18)
        assert float(terms["smooth3d"].data) == pytest.approx(0.0, abs=1e-18)
        reproj = reprojection_rmse(pose, uv, cam, conf)
        assert float(terms["reproj2d"].data) == pytest.approx(reproj**2, rel=1e-9)

    def test_supervised_loss_zero_on_truth(self, clip):
        assert float(supervised_loss(ad.Tensor(clip.poses3d), clip.poses3d).data) == 0.0

    def test_beta_balances_terms(self, clip):
        beta = smoothness_balance(clip.poses2d, clip.conf, clip.poses3d)
        d2 = np.linalg.norm(np.diff(clip.poses2d, axis=0), axis=2).mean()
        d3 = np.linalg.norm(np.diff(clip.poses3d, axis=0), axis=2).mean()
        assert beta == pytest.approx((d2 / d3) ** 2)

    def test_gradient_matches_finite_differences(self, clip, cam):
        rng = np.random.default_rng(1)
        cfg = LiftNetConfig(channels=6, image_size=(256, 256))
        net = LiftNet(cfg, rng=rng)
        # Give the zero-initialized head some signal.
        net.params["wo"].data[...] = rng.normal(0, 0.05, net.params["wo"].data.shape)
        feats = net.features(clip.poses2d, clip.conf)
        T = clip.n_frames

        def build():
            pred = ad.reshape(net.forward(feats), (T, 25, 3))
            total, _ = lifting_loss(
                pred, clip.poses2d, clip.conf, clip.poses3d, cam, beta=0.01
            )
            # Millimeter-squared losses are huge; scale to keep the
            # finite-difference step in a numerically honest range.
            return ad.mul(total, 1e-4)

        worst = ad.check_gradients(build, net.param_list(), rng, n_points=60)
        assert worst <= 1e-4


class TestTraining:
    def test_loss_decreases(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=40, channels=16)
        lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
        log = lift.training_log_
        assert log[-1]["total"] <= log[0]["total"]
        assert {"reproj2d", "anchor3d", "smooth2d", "smooth3d"} <= set(log[0])

    def test_deterministic_loss_curve(self, clip, cam):
        def run():
            lift = PoseLifter(seed=3, epochs=10, channels=8)
            lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
            return [e["total"] for e in lift.training_log_]

        assert run() == run()

    def test_length_mismatch_rejected(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=2)
        with pytest.raises(ValueError):
            lift.fit(clip.poses2d, clip.poses3d[:-2], cam)

    def test_too_short_clip_rejected(self, cam):
        lift = PoseLifter(seed=0, epochs=2)
        with pytest.raises(ValueError):
            lift.fit(np.zeros((5, 25, 2)), np.zeros((5, 25, 3)), cam)


class TestSemisupervised:
    def test_empty_partitions_rejected(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=2)
        unl = [(clip.poses2d, clip.conf, clip.poses3d)]
        with pytest.raises(ValueError):
            lift.fit_semisupervised([], unl, cam)
        with pytest.raises(ValueError):
            lift.fit_semisupervised(unl, [], cam)

    def test_batches_logged(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=2, channels=8)
        labeled = [(clip.poses2d, clip.conf, clip.poses3d)]
        unlabeled = [
            (clip.poses2d, clip.conf, clip.poses3d),
            (clip.poses2d, clip.conf, clip.poses3d),
        ]
        lift.fit_semisupervised(labeled, unlabeled, cam)
        assert lift.batch_log_ == [
            {"labeled": 0, "unlabeled": 0},
            {"labeled": 0, "unlabeled": 1},
        ]


class TestInference:
    def test_deterministic(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=15, channels=8)
        lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
        a = lift.predict(clip.poses2d, conf=clip.conf)
        b = lift.predict(clip.poses2d, conf=clip.conf)
        assert np.array_equal(a, b)

    def test_constant_input_constant_output(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=5, channels=8)
        lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
        uv = np.tile(clip.poses2d[0], (12, 1, 1))
        out = lift.predict(uv)
        assert np.abs(out - out[0]).max() <= 1e-9

    def test_round_trip_residual_matches_metric(self, clip, cam):
        lift = PoseLifter(seed=0, epochs=10, channels=8)
        lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
        pred = lift.predict(clip.poses2d, conf=clip.conf)
        uv_hat = project(pred, cam)
        manual = float(np.sqrt(((uv_hat - clip.poses2d) ** 2).sum(axis=-1).mean()))
        metric = reprojection_rmse(pred, clip.poses2d, cam, clip.conf)
        assert manual == pytest.approx(metric, rel=1e-9)

    def test_unfitted_predict(self, clip):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            PoseLifter().predict(clip.poses2d)

    def test_receptive_field(self):
        assert PoseLifter().receptive_field == 9

    def test_weights_round_trip(self, tmp_path, clip, cam):
        lift = PoseLifter(seed=0, epochs=5, channels=8)
        lift.fit(clip.poses2d, clip.poses3d, cam, conf=clip.conf)
        prefix = str(tmp_path / "lift")
        lift.save(prefix)
        other = PoseLifter(seed=1, channels=8).load(prefix)
        a = lift.predict(clip.poses2d, conf=clip.conf)
        b = other.predict(clip.poses2d, conf=clip.conf)
        assert np.array_equal(a, b)


class TestSmoothingEffect:
    def test_alpha_increase_never_roughens(self, cam):
        clip = synth.gen_motion(synth.MotionConfig(n_frames=12, seed=13,
                                                   noise_sigma=3.0))
        disps = []
        for scale in (1.0, 10.0, 100.0):
            lift = PoseLifter(seed=0, epochs=60, channels=16, alpha_scale=scale)
            lift.fit(clip.poses2d_noisy, clip.poses3d, cam, conf=clip.conf)
            pred = lift.predict(clip.poses2d_noisy, conf=clip.conf)
            disps.append(np.linalg.norm(np.diff(pred, axis=0), axis=2).mean())
        assert disps[1] <= disps[0] + 1e-9
        assert disps[2] <= disps[1] + 1e-9
