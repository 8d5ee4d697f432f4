"""Temporal-convolutional lifting of 2D pose sequences to 3D.

A causal dilated convolution stack maps normalized 2D keypoints (plus
confidences) to absolute camera-space joint positions.  Training needs
no 3D ground truth: the loss anchors predictions to the windowed
initializer's poses, keeps their reprojection close to the observed 2D
joints, and penalizes frame-to-frame jumps in both image and world
space.  A semi-supervised variant mixes clips with known 3D poses into
every optimization step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .camera import CameraParams
from .exceptions import DivergenceError
from .skeleton import N_JOINTS
from .validation import check_pose2d, check_pose3d, check_same_length

Z_SOFT_MIN_MM = 150.0
# Network outputs are in meters internally; targets are millimeters.
OUTPUT_SCALE = 1000.0

WEIGHT_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3", "wo", "bo")


@dataclass
class LiftNetConfig:
    channels: int = 64
    kernel_size: int = 3
    dilations: tuple = (1, 1, 2)
    image_size: tuple = (256, 256)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    @property
    def in_channels(self) -> int:
        return N_JOINTS * 3  # u, v, confidence per joint

    @property
    def out_channels(self) -> int:
        return N_JOINTS * 3  # x, y, z per joint


class LiftNet:
    """Parameter bundle and forward pass of the lifting stack."""

    def __init__(self, config: LiftNetConfig, rng=None):
        self.config = config
        if config.receptive_field % 2 == 0:
            raise ValueError("receptive field must be odd")
        rng = rng or np.random.default_rng(0)
        c = config.channels
        k = config.kernel_size
        d_in = config.in_channels

        def he(rows, fan_in, cols):
            return ad.Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                        size=(rows, fan_in, cols)))

        self.params = {
            "w1": he(k, d_in, c),
            "b1": ad.Tensor(np.zeros(c)),
            "w2": he(k, c, c),
            "b2": ad.Tensor(np.zeros(c)),
            "w3": he(k, c, c),
            "b3": ad.Tensor(np.zeros(c)),
            "wo": ad.Tensor(np.zeros((c, config.out_channels))),
            "bo": ad.Tensor(np.zeros(config.out_channels)),
        }

    def param_list(self):
        return [self.params[k] for k in WEIGHT_KEYS]

    def features(self, uv, conf):
        """Normalized inputs: coordinates about the image center, plus
        confidences; missing joints are zeroed at the center."""
        w, h = self.config.image_size
        scale = float(w)
        u = (uv[..., 0] - w / 2.0) / scale
        v = (uv[..., 1] - h / 2.0) / scale
        vis = conf > 0
        u = np.where(vis, u, 0.0)
        v = np.where(vis, v, 0.0)
        return np.concatenate([u, v, conf], axis=1)

    def forward(self, feats) -> ad.Tensor:
        """(T, 75) features to (T, 75) millimeter outputs."""
        p = self.params
        d1, d2, d3 = self.config.dilations
        x = ad.as_tensor(feats)
        x = ad.relu(ad.conv1d(x, p["w1"], p["b1"], dilation=d1, causal=True))
        x = ad.relu(ad.conv1d(x, p["w2"], p["b2"], dilation=d2, causal=True))
        x = ad.relu(ad.conv1d(x, p["w3"], p["b3"], dilation=d3, causal=True))
        out = ad.dense(x, p["wo"], p["bo"])
        return ad.mul(out, OUTPUT_SCALE)

    def predict(self, uv, conf) -> np.ndarray:
        out = self.forward(self.features(uv, conf))
        T = uv.shape[0]
        return out.data.reshape(T, N_JOINTS, 3)

    def save(self, prefix):
        ad.save_weights(prefix, self.params)

    @classmethod
    def load(cls, prefix, config: LiftNetConfig):
        net = cls(config)
        loaded = ad.load_weights(prefix)
        missing = set(WEIGHT_KEYS) - set(loaded)
        if missing:
            raise ValueError(f"weights file lacks tensors: {sorted(missing)}")
        net.params = {k: loaded[k] for k in WEIGHT_KEYS}
        return net


def supervised_loss(pred3d, gt3d) -> ad.Tensor:
    """Mean squared millimeter error against known 3D poses."""
    return ad.tmean(ad.square(ad.sub(ad.as_tensor(pred3d), gt3d)))


def projection_graph(pred3d: ad.Tensor, cam: CameraParams):
    """Differentiable pinhole projection of a (T, 25, 3) prediction."""
    x = pred3d[:, :, 0]
    y = pred3d[:, :, 1]
    z = ad.clamp(pred3d[:, :, 2], Z_SOFT_MIN_MM, None)
    u = ad.add(ad.mul(ad.div(x, z), cam.fx), cam.cx)
    v = ad.add(ad.mul(ad.div(y, z), cam.fy), cam.cy)
    return u, v


def smoothness_balance(uv, conf, init3d) -> float:
    """Weight beta placing the 3D smoothness term on the 2D term's scale.

    Computed from the targets as (mean 2D step / mean 3D step) squared,
    so beta * |3D step|^2 starts comparable to |2D step|^2.
    """
    vis = (conf[1:] > 0) & (conf[:-1] > 0)
    d2 = np.linalg.norm(uv[1:] - uv[:-1], axis=2)[vis]
    d3 = np.linalg.norm(init3d[1:] - init3d[:-1], axis=2).ravel()
    m2 = d2.mean() if d2.size else 0.0
    m3 = d3.mean()
    if m2 <= 0 or m3 <= 0:
        return 1.0
    return float((m2 / m3) ** 2)


def lifting_loss(pred3d, uv, conf, init3d, cam: CameraParams,
                 frame_alphas=None, beta=None, alpha_scale=1.0):
    """Training objective; returns (total, terms dict).

    Four parts: reprojection against the observed 2D joints, anchoring
    to the initializer's 3D poses, and temporally weighted 2D and 3D
    smoothness between consecutive estimates.
    """
    T = uv.shape[0]
    pred3d = ad.as_tensor(pred3d)
    u, v = projection_graph(pred3d, cam)
    mask = (conf > 0).astype(float)
    n_vis = max(mask.sum(), 1.0)
    du = ad.mul(ad.sub(u, uv[..., 0]), mask)
    dv = ad.mul(ad.sub(v, uv[..., 1]), mask)
    reproj = ad.mul(ad.add(ad.tsum(ad.square(du)), ad.tsum(ad.square(dv))),
                    1.0 / n_vis)
    anchor = ad.tmean(ad.square(ad.sub(pred3d, init3d)))
    terms = {"reproj2d": reproj, "anchor3d": anchor}
    if T > 1:
        if frame_alphas is None:
            alphas = np.ones(T - 1)
        else:
            alphas = np.asarray(frame_alphas, dtype=float)[1:]
        alphas = alphas * alpha_scale
        if beta is None:
            beta = smoothness_balance(uv, conf, init3d)
        w = alphas[:, None] / (T - 1)
        su = ad.sub(u[1:, :], u[:-1, :])
        sv = ad.sub(v[1:, :], v[:-1, :])
        smooth2d = ad.tsum(ad.mul(ad.add(ad.square(su), ad.square(sv)),
                                  w / N_JOINTS))
        d3 = ad.sub(pred3d[1:, :, :], pred3d[:-1, :, :])
        smooth3d = ad.tsum(ad.mul(ad.tsum(ad.square(d3), axis=2),
                                  w / N_JOINTS))
        terms["smooth2d"] = smooth2d
        terms["smooth3d"] = ad.mul(smooth3d, beta)
    else:
        terms["smooth2d"] = ad.Tensor(0.0)
        terms["smooth3d"] = ad.Tensor(0.0)
    total = ad.add(ad.add(terms["reproj2d"], terms["anchor3d"]),
                   ad.add(terms["smooth2d"], terms["smooth3d"]))
    return total, terms


class PoseLifter(BaseEstimator):
    """Trains the lifting network on one clip (or clip collections)."""

    def __init__(
        self,
        channels: int = 64,
        kernel_size: int = 3,
        dilations: tuple = (1, 1, 2),
        epochs: int = 200,
        lr: float = 1e-3,
        seed: int = 0,
        image_size: tuple = (256, 256),
        alpha_scale: float = 1.0,
    ):
        self.channels = channels
        self.kernel_size = kernel_size
        self.dilations = dilations
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.image_size = image_size
        self.alpha_scale = alpha_scale

    def _make_net(self) -> LiftNet:
        config = LiftNetConfig(
            channels=self.channels,
            kernel_size=self.kernel_size,
            dilations=tuple(self.dilations),
            image_size=tuple(self.image_size),
        )
        return LiftNet(config, rng=np.random.default_rng(self.seed))

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    def _init_bias(self, net, targets):
        net.params["bo"].data[...] = targets.reshape(-1, N_JOINTS * 3).mean(axis=0) / OUTPUT_SCALE

    def fit(self, X, init3d, camera: CameraParams, conf=None, frame_alphas=None):
        """Self-supervised training on one clip.

        X is the (T, 25, 2) observed 2D sequence, init3d the windowed
        initializer's (T, 25, 3) poses, frame_alphas the per-frame loss
        weights from the initializer (defaults to 1).
        """
        uv, conf = check_pose2d(X, conf)
        init3d = check_pose3d(init3d)
        check_same_length(uv, init3d)
        if uv.shape[0] < self.receptive_field:
            raise ValueError(
                f"clip of {uv.shape[0]} frames is shorter than the "
                f"receptive field ({self.receptive_field})"
            )
        net = self._make_net()
        self._init_bias(net, init3d)
        beta = smoothness_balance(uv, conf, init3d)
        feats = net.features(uv, conf)
        opt = ad.Adam(net.param_list(), lr=self.lr)
        log = []
        T = uv.shape[0]
        for epoch in range(self.epochs):
            opt.zero_grad()
            pred = ad.reshape(net.forward(feats), (T, N_JOINTS, 3))
            total, terms = lifting_loss(
                pred, uv, conf, init3d, camera,
                frame_alphas=frame_alphas, beta=beta,
                alpha_scale=self.alpha_scale,
            )
            value = float(total.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            ad.backward(total)
            opt.step()
            log.append(
                {
                    "epoch": epoch,
                    "total": value,
                    **{k: float(t.data) for k, t in terms.items()},
                }
            )
        self.net_ = net
        self.beta_ = beta
        self.training_log_ = log
        return self

    def fit_semisupervised(self, labeled, unlabeled, camera: CameraParams,
                           frame_alphas=None):
        """Joint training on labeled and unlabeled clips.

        labeled: list of (uv, conf, gt3d); unlabeled: list of
        (uv, conf, init3d).  Every optimization step processes one
        labeled and one unlabeled clip: a supervised squared error on
        the first half of the batch and the self-supervised objective
        on the second half.  Batch composition is recorded in
        `batch_log_`.
        """
        if not labeled or not unlabeled:
            raise ValueError("need at least one labeled and one unlabeled clip")
        return self._train_clips(labeled, unlabeled, camera, frame_alphas)

    def fit_unsupervised(self, unlabeled, camera: CameraParams,
                         frame_alphas=None):
        """Self-supervised training over several clips, no 3D labels."""
        if not unlabeled:
            raise ValueError("need at least one clip")
        return self._train_clips([], unlabeled, camera, frame_alphas)

    def _train_clips(self, labeled, unlabeled, camera, frame_alphas):
        labeled = [
            (*check_pose2d(uv, conf), check_pose3d(gt))
            for uv, conf, gt in labeled
        ]
        unlabeled = [
            (*check_pose2d(uv, conf), check_pose3d(init))
            for uv, conf, init in unlabeled
        ]
        net = self._make_net()
        anchor_source = labeled[0][2] if labeled else unlabeled[0][2]
        self._init_bias(net, anchor_source)
        opt = ad.Adam(net.param_list(), lr=self.lr)
        betas = [smoothness_balance(uv, c, p) for uv, c, p in unlabeled]
        log, batches = [], []
        n_pairs = max(len(labeled), len(unlabeled))
        for epoch in range(self.epochs):
            epoch_loss = 0.0
            for pair in range(n_pairs):
                opt.zero_grad()
                total = None
                entry = {}
                if labeled:
                    li = pair % len(labeled)
                    uv_l, conf_l, gt3d = labeled[li]
                    pred_l = ad.reshape(
                        net.forward(net.features(uv_l, conf_l)),
                        (uv_l.shape[0], N_JOINTS, 3),
                    )
                    total = supervised_loss(pred_l, gt3d)
                    entry["labeled"] = li
                if unlabeled:
                    ui = pair % len(unlabeled)
                    uv_u, conf_u, init_u = unlabeled[ui]
                    pred_u = ad.reshape(
                        net.forward(net.features(uv_u, conf_u)),
                        (uv_u.shape[0], N_JOINTS, 3),
                    )
                    unsup, _ = lifting_loss(
                        pred_u, uv_u, conf_u, init_u, camera,
                        frame_alphas=frame_alphas, beta=betas[ui],
                        alpha_scale=self.alpha_scale,
                    )
                    total = unsup if total is None else ad.add(total, unsup)
                    entry["unlabeled"] = ui
                value = float(total.data)
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite training loss at epoch {epoch}"
                    )
                ad.backward(total)
                opt.step()
                epoch_loss += value
                if epoch == 0:
                    batches.append(entry)
            log.append({"epoch": epoch, "total": epoch_loss / n_pairs})
        self.net_ = net
        self.training_log_ = log
        self.batch_log_ = batches
        return self

    def predict(self, X, conf=None) -> np.ndarray:
        """Deterministic 3D estimate for a 2D sequence."""
        if not hasattr(self, "net_"):
            raise NotFittedError("PoseLifter is not fitted")
        uv, conf = check_pose2d(X, conf)
        if uv.shape[0] < self.receptive_field:
            raise ValueError(
                f"clip of {uv.shape[0]} frames is shorter than the "
                f"receptive field ({self.receptive_field})"
            )
        return self.net_.predict(uv, conf)

    def save(self, prefix):
        if not hasattr(self, "net_"):
            raise NotFittedError("PoseLifter is not fitted")
        self.net_.save(prefix)

    def load(self, prefix):
        self.net_ = LiftNet.load(
            prefix,
            LiftNetConfig(
                channels=self.channels,
                kernel_size=self.kernel_size,
                dilations=tuple(self.dilations),
                image_size=tuple(self.image_size),
            ),
        )
        return self
