"""Initial 3D pose recovery by multi-seed windowed optimization.

For each sliding window of frames, several random seeds of (offsets,
bone ratios, root path, camera) are refined with Adam against the
observed 2D joints; the seed with the least reprojection error wins.
Offsets are clamped to their anatomical bounds after every step, bone
ratios follow a Gaussian prior, and the camera is kept near-constant by
averaging the per-window estimates.  Windows are warm-started from the
previous winner by default; fresh re-seeding per window is available
behind a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .camera import CameraParams, back_project, smooth_camera
from .exceptions import DivergenceError, LowVisibilityError
from .skeleton import (
    BONE_MEAN,
    BONE_STD,
    DEFAULT_HEIGHT_MM,
    DH_TABLE,
    JOINT_FRAME,
    N_BONES,
    N_JOINTS,
    N_OFFSETS,
    THETA_BOUNDS,
    DEFAULT_ROOT_ORIENTATION,
    SkeletonModel,
    forward_kinematics_seq,
    orientation_matrix,
)
from .validation import check_pose2d

MIN_VISIBLE_JOINTS = 8
Z_SOFT_MIN_MM = 150.0
# Below this singular-value ratio the visible joints are treated as
# collinear and the window is flagged as degenerate.
COLLINEARITY_TOL = 1e-3

_THETA_LO = np.array([b[0] for b in THETA_BOUNDS])
_THETA_HI = np.array([b[1] for b in THETA_BOUNDS])
_BONE_MEAN = np.array(BONE_MEAN)
_BONE_STD = np.array(BONE_STD)
_BONE_LO = np.maximum(0.0, _BONE_MEAN - 3.0 * _BONE_STD)
_BONE_HI = _BONE_MEAN + 3.0 * _BONE_STD


@dataclass
class SeedState:
    """Free variables of one seed, in normalized units.

    theta is radians (F, 33); root is in units of body height (F, 3);
    bones are raw ratios (9,); cam is (fx, fy, cx, cy) in units of the
    image width.
    """

    theta: np.ndarray
    root: np.ndarray
    bones: np.ndarray
    cam: np.ndarray

    def copy(self) -> "SeedState":
        return SeedState(self.theta.copy(), self.root.copy(),
                         self.bones.copy(), self.cam.copy())


@dataclass
class SeedResult:
    seed_index: int
    theta: np.ndarray            # (F, 33) radians
    root_mm: np.ndarray          # (F, 3)
    bones: np.ndarray            # (9,)
    camera: CameraParams
    frame_errors: np.ndarray     # (F,) summed squared pixel error
    loss_curve: np.ndarray       # best-so-far loss per epoch (incl. epoch 0)

    @property
    def total_error(self) -> float:
        return float(self.frame_errors.sum())


def select_best_seed(results) -> int:
    """Index into `results` of the seed with the least window error."""
    if not results:
        raise ValueError("no seed results to select from")
    totals = [r.total_error for r in results]
    return int(np.argmin(totals))


def _visible_counts(conf) -> np.ndarray:
    return (np.asarray(conf) > 0).sum(axis=1)


def _is_degenerate(uv, conf) -> bool:
    """True when the visible joints of any frame are nearly collinear."""
    for t in range(uv.shape[0]):
        pts = uv[t][conf[t] > 0]
        centered = pts - pts.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[0] == 0 or s[1] / s[0] < COLLINEARITY_TOL:
            return True
    return False


class _WindowProblem:
    """Differentiable reprojection objective for one window of frames."""

    def __init__(self, uv, conf, height_mm, image_width, bone_prior_weight):
        self.uv = uv
        self.mask = (conf > 0).astype(float)
        self.h = height_mm
        self.w_img = image_width
        self.lam = bone_prior_weight
        self.n_frames = uv.shape[0]
        self.root_rot = orientation_matrix(DEFAULT_ROOT_ORIENTATION)
        # Static per-link constants: (base_rad, offset, d_coef_mm, d_bone,
        # a_coef_mm, a_bone, alpha_rad, parent).
        self.links = []
        for base_deg, idx, d_expr, a_expr, alpha_deg, parent in DH_TABLE:
            self.links.append(
                (
                    math.radians(base_deg),
                    idx,
                    (0.0 if d_expr[1] is None else d_expr[0] * height_mm, d_expr[1]),
                    (0.0 if a_expr[1] is None else a_expr[0] * height_mm, a_expr[1]),
                    math.radians(alpha_deg),
                    parent,
                )
            )

    def make_params(self, state: SeedState):
        return {
            "theta": ad.Tensor(state.theta),
            "root": ad.Tensor(state.root),
            "bones": ad.Tensor(state.bones),
            "cam": ad.Tensor(state.cam),
        }

    def read_state(self, params) -> SeedState:
        return SeedState(
            params["theta"].data.copy(),
            params["root"].data.copy(),
            params["bones"].data.copy(),
            params["cam"].data.copy(),
        )

    def clamp(self, params) -> None:
        np.clip(params["theta"].data, _THETA_LO, _THETA_HI,
                out=params["theta"].data)
        np.clip(params["bones"].data, _BONE_LO, _BONE_HI,
                out=params["bones"].data)
        root = params["root"].data
        root[:, 2] = np.maximum(root[:, 2], Z_SOFT_MIN_MM * 2 / self.h)
        cam = params["cam"].data
        cam[0] = max(cam[0], 0.05)
        cam[1] = max(cam[1], 0.05)

    def joints3d_graph(self, params):
        """Differentiable (F, 25, 3) joint positions in millimeters."""
        theta = params["theta"]
        bones = params["bones"]
        root_mm = ad.mul(params["root"], self.h)
        zero = ad.Tensor(0.0)
        world = [None] * len(self.links)
        root_world = ad.root_transform(root_mm, self.root_rot)
        for r, (base, idx, (d_coef, d_bone), (a_coef, a_bone), alpha, parent) in enumerate(
            self.links
        ):
            th = ad.add(theta[:, idx], base)
            d = zero if d_bone is None else ad.mul(bones[d_bone], d_coef)
            a = zero if a_bone is None else ad.mul(bones[a_bone], a_coef)
            local = ad.link_transform(th, d, a, alpha)
            parent_world = root_world if parent < 0 else world[parent]
            world[r] = ad.matmul(parent_world, local)
        cols = []
        for fr in JOINT_FRAME:
            src = root_world if fr < 0 else world[fr]
            cols.append(src[:, 0:3, 3])
        return ad.stack(cols, axis=1)

    def loss_graph(self, params):
        pts = self.joints3d_graph(params)
        cam = ad.mul(params["cam"], self.w_img)
        x = pts[:, :, 0]
        y = pts[:, :, 1]
        z = ad.clamp(pts[:, :, 2], Z_SOFT_MIN_MM, None)
        u = ad.add(ad.mul(ad.div(x, z), cam[0]), cam[2])
        v = ad.add(ad.mul(ad.div(y, z), cam[1]), cam[3])
        du = ad.sub(u, self.uv[:, :, 0])
        dv = ad.sub(v, self.uv[:, :, 1])
        sq = ad.mul(ad.add(ad.square(du), ad.square(dv)), self.mask)
        loss = ad.tsum(sq)
        if self.lam > 0:
            zscore = ad.div(ad.sub(params["bones"], _BONE_MEAN), _BONE_STD)
            loss = ad.add(loss, ad.mul(ad.tsum(ad.square(zscore)), self.lam))
        return loss

    def numpy_errors(self, state: SeedState):
        """Per-frame summed squared pixel error at the given state."""
        model = SkeletonModel(height_mm=self.h, bone_ratios=tuple(state.bones))
        theta = np.clip(state.theta, _THETA_LO, _THETA_HI)
        pts = forward_kinematics_seq(model, theta, state.root * self.h)
        cam = state.cam * self.w_img
        z = np.maximum(pts[..., 2], Z_SOFT_MIN_MM)
        u = cam[0] * pts[..., 0] / z + cam[2]
        v = cam[1] * pts[..., 1] / z + cam[3]
        d2 = (u - self.uv[..., 0]) ** 2 + (v - self.uv[..., 1]) ** 2
        return (d2 * self.mask).sum(axis=1)

    # Learning-rate multipliers over training progress: explore early,
    # settle late.  Applied on top of the configured base rate.
    LR_SCHEDULE = ((0.3, 6.0), (0.6, 2.0), (0.85, 1.0), (1.01, 0.25))

    def _lr_at(self, base, progress):
        for cutoff, mult in self.LR_SCHEDULE:
            if progress < cutoff:
                return base * mult
        return base

    def optimize(self, state: SeedState, epochs, steps_per_epoch, lr,
                 stop_rmse=0.05, prune_ref=None, prune_frac=0.35,
                 prune_factor=20.0, cam_lr_scale=1.0):
        """Adam with bound clamping and best-iterate retention.

        Returns (best_state, loss_curve) where the curve tracks the best
        loss seen up to each epoch, starting at the initial point, or
        None when the loss goes non-finite at the start.  Stops early
        once the window RMSE falls below stop_rmse pixels; when
        prune_ref (a competing seed's final loss) is given, a seed still
        prune_factor times worse at prune_frac progress is abandoned.
        cam_lr_scale damps camera updates (constancy across windows).
        """
        params = self.make_params(state)
        pose_opt = ad.Adam([params["theta"], params["root"], params["bones"]], lr=lr)
        cam_opt = ad.Adam([params["cam"]], lr=lr * cam_lr_scale)
        best_loss = float(self.loss_graph(params).data)
        if not math.isfinite(best_loss):
            return None, None
        best_state = self.read_state(params)
        curve = [best_loss]
        stop_loss = stop_rmse**2 * self.mask.sum()
        prune_epoch = int(prune_frac * epochs)
        for epoch in range(epochs):
            if best_loss <= stop_loss:
                curve.extend([best_loss] * (epochs - epoch))
                break
            if (
                prune_ref is not None
                and epoch == prune_epoch
                and best_loss > prune_factor * max(prune_ref, stop_loss)
            ):
                curve.extend([best_loss] * (epochs - epoch))
                break
            rate = self._lr_at(lr, epoch / max(1, epochs))
            pose_opt.lr = rate
            cam_opt.lr = rate * cam_lr_scale
            for _ in range(steps_per_epoch):
                pose_opt.zero_grad()
                cam_opt.zero_grad()
                loss = self.loss_graph(params)
                if not math.isfinite(float(loss.data)):
                    break
                ad.backward(loss)
                pose_opt.step()
                cam_opt.step()
                self.clamp(params)
            current = float(self.loss_graph(params).data)
            if math.isfinite(current) and current < best_loss:
                best_loss = current
                best_state = self.read_state(params)
            curve.append(best_loss)
        return best_state, np.array(curve)


def sample_seed(rng, uv, conf, image_size, height_mm, neutral=False) -> SeedState:
    """Random initialization of one seed.

    Offsets are uniform within bounds (or start at the neutral standing
    pose when `neutral` is set) and bone ratios follow their truncated
    normal prior.  The focal length is uniform in half to twice the
    image width with the principal point near the center; the root is
    placed by matching the projected body height to the observed
    keypoint extent and back-projecting the keypoint centroid.
    """
    W = image_size[0]
    F = uv.shape[0]
    from .skeleton import NEUTRAL_OFFSETS

    theta0 = NEUTRAL_OFFSETS.copy() if neutral else rng.uniform(_THETA_LO, _THETA_HI)
    bones = np.empty(N_BONES)
    for i in range(N_BONES):
        while True:
            v = rng.normal(_BONE_MEAN[i], _BONE_STD[i])
            if _BONE_LO[i] <= v <= _BONE_HI[i]:
                bones[i] = v
                break
    f = rng.uniform(0.5 * W, 2.0 * W)
    cx = image_size[0] / 2.0 + rng.uniform(-0.1, 0.1) * W
    cy = image_size[1] / 2.0 + rng.uniform(-0.1, 0.1) * W
    cam = np.array([f / W, f / W, cx / W, cy / W])

    mid = F // 2
    vis = conf[mid] > 0
    pts = uv[mid][vis]
    extent = max(float(pts[:, 1].max() - pts[:, 1].min()), 8.0)
    depth = np.clip(f * 0.75 * height_mm / extent / height_mm, 0.3, 12.0)
    center_uv = pts.mean(axis=0)
    cam_obj = CameraParams(fx=f, fy=f, cx=cx, cy=cy)
    root_mm = back_project(center_uv, depth * height_mm, cam_obj)
    root = np.tile(root_mm / height_mm, (F, 1))
    theta = np.tile(theta0, (F, 1))
    return SeedState(theta=theta, root=root, bones=bones, cam=cam)


class PoseInitializer(BaseEstimator, TransformerMixin):
    """Transductive estimator: fit one 2D sequence, read off its 3D poses.

    After fit, the per-frame pose estimates are in `poses3d_`, the
    smoothed per-window cameras in `cameras_`, per-window reprojection
    RMSE in `window_residuals_`, and per-frame loss weights (used by the
    lifting stage) in `frame_alphas_`.
    """

    def __init__(
        self,
        delta: int = 3,
        n_seeds: int = 2,
        epochs: int = 50,
        steps_per_epoch: int = 20,
        lr: float = 0.01,
        warm_start: bool = True,
        seed: int = 0,
        image_size: tuple = (256, 256),
        height_mm: float = DEFAULT_HEIGHT_MM,
        bone_prior_weight: float = 10.0,
        min_visible: int = MIN_VISIBLE_JOINTS,
    ):
        self.delta = delta
        self.n_seeds = n_seeds
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.warm_start = warm_start
        self.seed = seed
        self.image_size = image_size
        self.height_mm = height_mm
        self.bone_prior_weight = bone_prior_weight
        self.min_visible = min_visible

    # -- single window ----------------------------------------------------

    def fit_window(self, uv, conf=None, seeds=None, rng=None, cam_lr_scale=1.0,
                   reuse_loss=None):
        """Optimize one window; returns (list of SeedResult, winner index).

        uv is (F, 25, 2) with F = 2 * delta + 1.  Seeds may be passed
        explicitly (warm starts); otherwise n_seeds fresh ones are drawn.
        """
        uv, conf = check_pose2d(uv, conf)
        counts = _visible_counts(conf)
        if counts.min() < self.min_visible:
            bad = int(np.argmin(counts))
            raise LowVisibilityError(
                f"frame {bad} has only {counts[bad]} visible joints "
                f"(need {self.min_visible})"
            )
        problem = _WindowProblem(
            uv, conf, self.height_mm, self.image_size[0], self.bone_prior_weight
        )
        rng = rng or np.random.default_rng(self.seed)
        if seeds is None:
            seeds = [
                sample_seed(rng, uv, conf, self.image_size, self.height_mm,
                            neutral=(k == 0))
                for k in range(self.n_seeds)
            ]
        # An identical, already-solved subproblem (the warm start achieves
        # the previous window's final loss on this window's data) is reused
        # untouched so repeated windows of identical data stay bit-stable.
        if reuse_loss is not None and seeds:
            warm = seeds[0]
            init_loss = float(problem.loss_graph(problem.make_params(warm)).data)
            if math.isfinite(init_loss) and init_loss <= reuse_loss * (1 + 1e-9) + 1e-12:
                cam = warm.cam * self.image_size[0]
                result = SeedResult(
                    seed_index=0,
                    theta=np.clip(warm.theta, _THETA_LO, _THETA_HI),
                    root_mm=warm.root * self.height_mm,
                    bones=warm.bones.copy(),
                    camera=CameraParams(fx=cam[0], fy=cam[1], cx=cam[2], cy=cam[3]),
                    frame_errors=problem.numpy_errors(warm),
                    loss_curve=np.full(self.epochs + 1, init_loss),
                )
                return [result], 0
        results = []
        prune_ref = None
        for k, state in enumerate(seeds):
            best_state, curve = problem.optimize(
                state, self.epochs, self.steps_per_epoch, self.lr,
                prune_ref=prune_ref, cam_lr_scale=cam_lr_scale,
            )
            if best_state is None:
                continue
            final = float(curve[-1])
            prune_ref = final if prune_ref is None else min(prune_ref, final)
            cam = best_state.cam * self.image_size[0]
            results.append(
                SeedResult(
                    seed_index=k,
                    theta=np.clip(best_state.theta, _THETA_LO, _THETA_HI),
                    root_mm=best_state.root * self.height_mm,
                    bones=best_state.bones.copy(),
                    camera=CameraParams(fx=cam[0], fy=cam[1], cx=cam[2], cy=cam[3]),
                    frame_errors=problem.numpy_errors(best_state),
                    loss_curve=curve,
                )
            )
        if not results:
            raise DivergenceError("all seeds diverged in this window")
        return results, select_best_seed(results)

    # -- whole sequence ----------------------------------------------------

    def fit(self, X, y=None, conf=None):
        uv, conf = check_pose2d(X, conf)
        T = uv.shape[0]
        span = 2 * self.delta + 1
        if T < span:
            raise ValueError(f"sequence of {T} frames is shorter than one window ({span})")
        n_windows = max(1, T // (2 * self.delta))
        rng = np.random.default_rng(self.seed)

        poses3d = np.full((T, N_JOINTS, 3), np.nan)
        thetas = np.full((T, N_OFFSETS), np.nan)
        roots = np.full((T, 3), np.nan)
        covered = np.zeros(T, dtype=bool)
        window_meta = []
        cam_history = []
        carried = None
        carried_loss = None

        for w in range(n_windows):
            t_center = min(self.delta + w * 2 * self.delta, T - 1 - self.delta)
            lo = t_center - self.delta
            hi = t_center + self.delta + 1
            uv_w, conf_w = uv[lo:hi], conf[lo:hi]
            flag = None
            results = winner = None
            if _visible_counts(conf_w).min() < self.min_visible:
                flag = "low_visibility"
            elif _is_degenerate(uv_w, conf_w):
                flag = "degenerate"
            else:
                seeds = None
                cam_lr_scale = 1.0
                if cam_history and self.warm_start:
                    # Enforce projection constancy: later windows start
                    # from the smoothed camera and barely move it.
                    cam_norm = smooth_camera(cam_history).as_array() / self.image_size[0]
                    cam_lr_scale = 0.05
                    fresh = [
                        sample_seed(rng, uv_w, conf_w, self.image_size,
                                    self.height_mm, neutral=(k == 0))
                        for k in range(self.n_seeds - 1)
                    ]
                    for s in fresh:
                        s.cam = cam_norm.copy()
                    if carried is not None:
                        warm = carried.copy()
                        warm.theta = np.tile(carried.theta[-1], (span, 1))
                        warm.root = np.tile(carried.root[-1], (span, 1))
                        warm.cam = cam_norm.copy()
                        seeds = [warm] + fresh
                    else:
                        seeds = fresh + [
                            sample_seed(rng, uv_w, conf_w, self.image_size,
                                        self.height_mm)
                        ]
                        for s in seeds:
                            s.cam = cam_norm.copy()
                try:
                    results, winner = self.fit_window(
                        uv_w, conf_w, seeds=seeds, rng=rng,
                        cam_lr_scale=cam_lr_scale,
                        reuse_loss=carried_loss if seeds is not None else None,
                    )
                except DivergenceError:
                    flag = "diverged"

            if flag is None:
                best = results[winner]
                carried = SeedState(
                    theta=best.theta.copy(),
                    root=best.root_mm / self.height_mm,
                    bones=best.bones.copy(),
                    cam=best.camera.as_array() / self.image_size[0],
                )
                carried_loss = float(best.loss_curve[-1])
                cam_history.append(best.camera)
                smoothed = smooth_camera(cam_history)
                model = SkeletonModel(
                    height_mm=self.height_mm, bone_ratios=tuple(best.bones)
                )
                pose_w = forward_kinematics_seq(model, best.theta, best.root_mm)
                poses3d[lo:hi] = pose_w
                thetas[lo:hi] = best.theta
                roots[lo:hi] = best.root_mm
                covered[lo:hi] = True
                # Residual reported against the smoothed camera so the
                # published (pose, camera, error) triple is self-consistent.
                z = np.maximum(pose_w[..., 2], Z_SOFT_MIN_MM)
                u = smoothed.fx * pose_w[..., 0] / z + smoothed.cx
                v = smoothed.fy * pose_w[..., 1] / z + smoothed.cy
                mask = conf_w > 0
                d2 = (u - uv_w[..., 0]) ** 2 + (v - uv_w[..., 1]) ** 2
                rmse = float(np.sqrt(d2[mask].mean()))
                window_meta.append(
                    {
                        "window": w,
                        "span": (lo, hi),
                        "camera": smoothed,
                        "rmse": rmse,
                        "alpha": 1.0 / (1.0 + rmse),
                        "seed_won": best.seed_index,
                        "flag": None,
                        "loss_curves": [r.loss_curve for r in results],
                        "frame_errors": best.frame_errors,
                    }
                )
            else:
                window_meta.append(
                    {
                        "window": w,
                        "span": (lo, hi),
                        "camera": None,
                        "rmse": float("nan"),
                        "alpha": 0.0,
                        "seed_won": None,
                        "flag": flag,
                        "loss_curves": [],
                        "frame_errors": None,
                    }
                )

        if not covered.any():
            raise DivergenceError("no window could be initialized")
        self._fill_gaps(poses3d, covered)
        self.poses3d_ = poses3d
        self.thetas_ = thetas
        self.roots_ = roots
        self.bones_ = carried.bones.copy() if carried is not None else None
        self.windows_ = window_meta
        self.cameras_ = [m["camera"] for m in window_meta]
        self.camera_ = smooth_camera(cam_history)
        self.window_residuals_ = np.array([m["rmse"] for m in window_meta])
        self.frame_alphas_ = self._frame_alphas(T, window_meta)
        self.n_frames_ = T
        return self

    @staticmethod
    def _fill_gaps(poses3d, covered):
        T = len(covered)
        idx_covered = np.flatnonzero(covered)
        for t in range(T):
            if not covered[t]:
                nearest = idx_covered[np.argmin(np.abs(idx_covered - t))]
                poses3d[t] = poses3d[nearest]

    @staticmethod
    def _frame_alphas(T, window_meta):
        alphas = np.zeros(T)
        assigned = np.zeros(T, dtype=bool)
        for m in window_meta:
            lo, hi = m["span"]
            if m["flag"] is None:
                alphas[lo:hi] = m["alpha"]
                assigned[lo:hi] = True
        if assigned.any():
            default = alphas[assigned].mean()
            alphas[~assigned] = default
        return alphas

    def transform(self, X, conf=None):
        if not hasattr(self, "poses3d_"):
            raise NotFittedError("PoseInitializer is not fitted")
        uv, _ = check_pose2d(X, conf)
        if uv.shape[0] != self.n_frames_:
            raise ValueError(
                "transform expects the fitted sequence "
                f"({self.n_frames_} frames), got {uv.shape[0]}"
            )
        return self.poses3d_

    def fit_transform(self, X, y=None, conf=None):
        return self.fit(X, conf=conf).transform(X, conf=conf)
