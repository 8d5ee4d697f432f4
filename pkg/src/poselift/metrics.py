"""Evaluation metrics: joint position errors, reprojection error,
multi-label F-score, classification and tracking accuracies."""

from __future__ import annotations

import numpy as np

from .camera import CameraParams, project
from .exceptions import UndefinedMetricError
from .skeleton import ROOT_JOINT

# Joints used for the height proxy: 4x the pelvis-to-neck distance equals
# the subject height at the average spine ratio of 0.25.
_HEIGHT_PROXY_JOINTS = (ROOT_JOINT, 2)
_HEIGHT_PROXY_SCALE = 4.0


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance over frames and joints, millimeters."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) joint positions, got {pred.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def pose_height(seq) -> float:
    """Height proxy of a pose sequence from the spine segment length."""
    seq = np.asarray(seq, dtype=float)
    a, b = _HEIGHT_PROXY_JOINTS
    spans = np.linalg.norm(seq[..., a, :] - seq[..., b, :], axis=-1)
    h = _HEIGHT_PROXY_SCALE * float(np.mean(spans))
    return h if h > 0 else 1.0


def scale_normalized_mpjpe(pred, gt, height_pred=None, height_gt=None) -> float:
    """Root-aligned, height-normalized joint error (fraction of height).

    Each sequence is centered on its own root joint per frame and divided
    by its own height proxy, which factors out the global translation and
    scale a single camera cannot observe.  Not a standard protocol; use
    mpjpe for comparisons with published numbers.
    """
    pred, gt = _check_pair(pred, gt)
    hp = pose_height(pred) if height_pred is None else float(height_pred)
    hg = pose_height(gt) if height_gt is None else float(height_gt)
    pc = (pred - pred[..., ROOT_JOINT : ROOT_JOINT + 1, :]) / hp
    gc = (gt - gt[..., ROOT_JOINT : ROOT_JOINT + 1, :]) / hg
    return float(np.linalg.norm(pc - gc, axis=-1).mean())


def reprojection_rmse(pose3d, pose2d, cam: CameraParams, conf=None) -> float:
    """Root-mean-square pixel distance between projected and observed joints.

    Joints with confidence 0 are excluded; raises UndefinedMetricError
    when nothing is visible.
    """
    pose3d = np.asarray(pose3d, dtype=float)
    pose2d = np.asarray(pose2d, dtype=float)
    if pose3d.shape[:-1] != pose2d.shape[:-1]:
        raise ValueError(
            f"sequence shapes disagree: {pose3d.shape} vs {pose2d.shape}"
        )
    uv = project(pose3d, cam)
    d2 = ((uv - pose2d) ** 2).sum(axis=-1)
    if conf is not None:
        mask = np.asarray(conf) > 0
        if not np.any(mask):
            raise UndefinedMetricError("all joints are invisible")
        d2 = d2[mask]
    return float(np.sqrt(d2.mean()))


def fscore(pred, gt, mode: str = "micro"):
    """F1 of binary multi-label predictions.

    mode "micro" pools every (frame, label) cell; mode "macro" averages
    per-label F1 over labels (last axis).  Defined as 0 when an F1 has
    no support.
    """
    pred, gt = _check_pair(pred, gt)
    pred = pred > 0.5
    gt = gt > 0.5
    if mode == "micro":
        return _f1(pred, gt)
    if mode == "macro":
        n = pred.shape[-1]
        return float(
            np.mean([_f1(pred[..., i], gt[..., i]) for i in range(n)])
        )
    raise ValueError(f"unknown mode {mode!r}")


def _f1(pred, gt) -> float:
    tp = float(np.sum(pred & gt))
    fp = float(np.sum(pred & ~gt))
    fn = float(np.sum(~pred & gt))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def classification_accuracy(pred_labels, gt_labels) -> float:
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("no predictions to score")
    return float(np.mean(pred == gt))


def identity_accuracy(assigned_ids, gt_ids) -> float:
    """Fraction of (frame, track) assignments matching ground truth."""
    return classification_accuracy(assigned_ids, gt_ids)
