"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .skeleton import N_JOINTS


def check_pose2d(uv, conf=None, allow_missing=True):
    """Validate a (T, 25, 2) pixel sequence and its confidences.

    Returns (uv, conf) as float arrays; conf defaults to ones.  Joints
    with confidence 0 may carry non-finite coordinates only when
    allow_missing is set.
    """
    uv = np.asarray(uv, dtype=float)
    if uv.ndim != 3 or uv.shape[1:] != (N_JOINTS, 2):
        raise ValueError(f"expected (T, {N_JOINTS}, 2) 2D poses, got {uv.shape}")
    if conf is None:
        conf = np.ones(uv.shape[:2])
    else:
        conf = np.asarray(conf, dtype=float)
        if conf.shape != uv.shape[:2]:
            raise ValueError(
                f"confidence shape {conf.shape} does not match poses {uv.shape[:2]}"
            )
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    visible = conf > 0
    coords_ok = np.isfinite(uv).all(axis=2)
    if allow_missing:
        if np.any(visible & ~coords_ok):
            raise ValueError("visible joints carry non-finite coordinates")
    elif not coords_ok.all():
        raise ValueError("2D poses contain non-finite coordinates")
    return uv, conf


def check_pose3d(xyz):
    """Validate a (T, 25, 3) millimeter sequence."""
    xyz = np.asarray(xyz, dtype=float)
    if xyz.ndim != 3 or xyz.shape[1:] != (N_JOINTS, 3):
        raise ValueError(f"expected (T, {N_JOINTS}, 3) 3D poses, got {xyz.shape}")
    if not np.all(np.isfinite(xyz)):
        raise ValueError("3D poses contain non-finite coordinates")
    return xyz


def check_same_length(*seqs):
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"sequence lengths disagree: {sorted(lengths)}")
    return lengths.pop()
