import numpy as np
import pytest

from poselift.camera import CameraParams, back_project, project, smooth_camera
from poselift.exceptions import BehindCameraError


@pytest.fixture
def cam():
    return CameraParams(fx=500.0, fy=500.0, cx=320.0, cy=240.0)


class TestProject:
    def test_on_axis_hits_principal_point(self, cam):
        assert np.allclose(project(np.array([0.0, 0.0, 1000.0]), cam), [320.0, 240.0])

    def test_known_offset(self, cam):
        uv = project(np.array([100.0, 0.0, 1000.0]), cam)
        assert np.allclose(uv, [370.0, 240.0])

    def test_behind_camera(self, cam):
        with pytest.raises(BehindCameraError):
            project(np.array([[0.0, 0.0, 50.0]]), cam)

    def test_behind_camera_names_joint(self, cam):
        pts = np.tile([0.0, 0.0, 1000.0], (25, 1))
        pts[7, 2] = 10.0
        with pytest.raises(BehindCameraError, match=r"\(7,\)"):
            project(pts, cam)

    def test_scale_covariance(self, cam):
        rng = np.random.default_rng(3)
        pts = rng.uniform([-500, -500, 2000], [500, 500, 4000], size=(40, 3))
        s = 1.7
        scaled = pts.copy()
        scaled[:, :2] *= s
        uv = project(pts, cam)
        uv_s = project(scaled, cam)
        centred = uv - [cam.cx, cam.cy]
        centred_s = uv_s - [cam.cx, cam.cy]
        assert np.allclose(centred_s, s * centred)

    def test_back_project_round_trip(self, cam):
        rng = np.random.default_rng(4)
        pts = rng.uniform([-800, -800, 1500], [800, 800, 6000], size=(100, 3))
        uv = project(pts, cam)
        back = back_project(uv, pts[:, 2], cam)
        assert np.abs(back - pts).max() / np.abs(pts).max() <= 1e-9


class TestSmoothCamera:
    def test_singleton(self, cam):
        assert smooth_camera([cam]) == cam

    def test_constant_history(self, cam):
        assert smooth_camera([cam] * 5) == cam

    def test_arithmetic_mean(self):
        a = CameraParams(fx=400.0, fy=400.0, cx=100.0, cy=100.0)
        b = CameraParams(fx=600.0, fy=600.0, cx=100.0, cy=100.0)
        assert smooth_camera([a, b]).fx == pytest.approx(500.0)

    def test_empty_history(self):
        with pytest.raises(ValueError):
            smooth_camera([])


class TestValidation:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraParams(fx=0.0, fy=1.0, cx=0.0, cy=0.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            CameraParams(fx=float("nan"), fy=1.0, cx=0.0, cy=0.0)

    def test_dict_round_trip(self, cam):
        assert CameraParams.from_dict(cam.to_dict()) == cam
