"""34-DOF articulated dancer model and forward kinematics.

The model is a kinematic tree of 34 links, each described by one row of
classic Denavit-Hartenberg parameters (rotation ``theta`` about z,
translation ``d`` along z, translation ``a`` along x, twist ``alpha``
about x).  Link lengths are expressed as fractions of the subject's
height, so one scalar ``height_mm`` plus nine bone ratios fix the whole
geometry.  Thirty-three named rotation offsets ``theta_0..theta_32``
articulate the tree (rows 0 and 1 share ``theta_0``); the root azimuth
carried by that shared offset is the 34th degree of freedom.  Root
translation/orientation live in ``root_position`` / ``root_orientation``
and are fitted separately by the initializer.

25 output joints are read off the link frames through ``JOINT_FRAME``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import BoundsClampWarning, BoundsViolationError

N_LINKS = 34
N_OFFSETS = 33
N_BONES = 9
N_JOINTS = 25

# Tolerance under which out-of-bound offsets are clamped instead of rejected.
BOUND_CLAMP_TOL = 1e-9

# One row per link: (theta_base_deg, offset_index, (d_coef, d_bone),
# (a_coef, a_bone), alpha_deg, parent_link).  d = d_coef * b[d_bone] * h,
# same for a; (0.0, None) means a structural zero.  parent -1 is the root
# frame.  Branches: links 0-1 torso, 2-7 spine/head, 8-13 left arm,
# 14-19 right arm, 20-26 left leg, 27-33 right leg.  Arms and head hang
# off link 2 (top of the spine); legs hang off link 1 (pelvis).
DH_TABLE = (
    (180.0, 0, (0.0, None), (0.0, None), 90.0, -1),
    (-90.0, 0, (0.0, None), (0.0, None), 90.0, 0),
    (90.0, 1, (0.0, None), (1.0, 0), -90.0, 1),
    (0.0, 2, (0.0, None), (0.0, None), 90.0, 2),
    (90.0, 3, (0.0, None), (0.0, None), 90.0, 3),
    (90.0, 4, (1.0, 1), (0.0, None), 90.0, 4),
    (90.0, 5, (0.0, None), (0.0, None), 90.0, 5),
    (90.0, 6, (0.0, None), (1.0, 1), 0.0, 6),
    (0.0, 7, (0.0, None), (0.0, None), 90.0, 2),
    (90.0, 8, (0.0, None), (0.0, None), 90.0, 8),
    (90.0, 9, (1.0, 3), (0.0, None), 90.0, 9),
    (0.0, 10, (0.0, None), (0.0, None), -90.0, 10),
    (90.0, 11, (1.0, 4), (0.0, None), 90.0, 11),
    (90.0, 12, (0.0, None), (0.6, 4), 0.0, 12),
    (0.0, 13, (0.0, None), (0.0, None), -90.0, 2),
    (-90.0, 14, (0.0, None), (0.0, None), 90.0, 14),
    (90.0, 15, (-1.0, 3), (0.0, None), 90.0, 15),
    (0.0, 16, (0.0, None), (0.0, None), -90.0, 16),
    (90.0, 17, (-1.0, 4), (0.0, None), 90.0, 17),
    (-90.0, 18, (0.0, None), (-0.6, 4), 0.0, 18),
    (0.0, 19, (0.0, None), (0.0, None), -90.0, 1),
    (-90.0, 20, (0.0, None), (0.0, None), 90.0, 20),
    (0.0, 21, (-1.0, 6), (0.0, None), -90.0, 21),
    (90.0, 22, (0.0, None), (1.0, 7), 0.0, 22),
    (0.0, 23, (0.0, None), (0.0, None), 90.0, 23),
    (0.0, 24, (1.0, 8), (0.0, None), -90.0, 24),
    (-90.0, 25, (0.0, None), (0.1, 8), 0.0, 25),
    (0.0, 26, (0.0, None), (0.0, None), -90.0, 1),
    (-90.0, 27, (0.0, None), (0.0, None), 90.0, 27),
    (0.0, 28, (1.0, 6), (0.0, None), -90.0, 28),
    (90.0, 29, (0.0, None), (-1.0, 7), 0.0, 29),
    (0.0, 30, (0.0, None), (0.0, None), 90.0, 30),
    (0.0, 31, (-1.0, 8), (0.0, None), -90.0, 31),
    (-90.0, 32, (0.0, None), (-0.1, 8), 0.0, 32),
)

_PI = math.pi

# Rotation offset bounds in radians.  Offsets with no anatomical bound
# (0, 4, 5, 6, 11, 12, 17, 18, 24, 25, 31, 32) default to a full turn.
THETA_BOUNDS = (
    (-_PI, _PI),                    # 0  torso azimuth (shared by links 0,1)
    (-_PI / 8, _PI / 8),            # 1  spine sway
    (-_PI / 4, _PI / 4),            # 2  neck
    (-_PI / 4, _PI / 4),            # 3  neck
    (-_PI, _PI),                    # 4  head
    (-_PI, _PI),                    # 5  head
    (-_PI, _PI),                    # 6  head
    (-_PI / 1.6, _PI / 1.6),        # 7  left shoulder
    (-_PI / 4, _PI / 1.6),          # 8  left shoulder
    (-_PI, 0.0),                    # 9  left upper arm twist
    (-_PI / 2, 0.0),                # 10 left elbow
    (-_PI, _PI),                    # 11 left forearm
    (-_PI, _PI),                    # 12 left hand
    (-_PI / 1.6, _PI / 1.6),        # 13 right shoulder
    (-_PI / 4, _PI / 1.6),          # 14 right shoulder
    (-_PI, 0.0),                    # 15 right upper arm twist
    (-_PI / 2, 0.0),                # 16 right elbow
    (-_PI, _PI),                    # 17 right forearm
    (-_PI, _PI),                    # 18 right hand
    (-_PI / 2, _PI / 4),            # 19 left hip
    (-_PI, _PI / 1.3),              # 20 left hip
    (-_PI / 2, _PI / 2),            # 21 left thigh twist
    (0.0, _PI / 1.3),               # 22 left knee
    (-_PI / 4, _PI / 2),            # 23 left ankle
    (-_PI, _PI),                    # 24 left foot
    (-_PI, _PI),                    # 25 left toe
    (-_PI / 2, _PI / 4),            # 26 right hip
    (-_PI, _PI / 1.3),              # 27 right hip
    (-_PI / 2, _PI / 2),            # 28 right thigh twist
    (0.0, _PI / 1.3),               # 29 right knee
    (-_PI / 4, _PI / 2),            # 30 right ankle
    (-_PI, _PI),                    # 31 right foot
    (-_PI, _PI),                    # 32 right toe
)

BONE_NAMES = (
    "neck", "head", "shoulder", "uparm", "lowarm",
    "hip", "upleg", "lowleg", "toe",
)
BONE_MEAN = (0.25, 0.08, 0.06, 0.17, 0.17, 0.04, 0.21, 0.21, 0.04)
BONE_STD = (0.05,) * 9

JOINT_NAMES = (
    "pelvis", "torso", "neck", "head", "head_top",
    "l_shoulder", "l_elbow", "l_wrist", "l_hand",
    "r_shoulder", "r_elbow", "r_wrist", "r_hand",
    "l_hip", "l_knee", "l_ankle", "l_heel", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_heel", "r_toe",
    "l_collar", "r_collar",
)

# Which link frame each output joint reads its position from (-1 = root).
JOINT_FRAME = (
    -1, 1, 2, 5, 7,
    9, 10, 12, 13,
    15, 16, 18, 19,
    21, 22, 23, 25, 26,
    28, 29, 30, 32, 33,
    8, 14,
)

ROOT_JOINT = 0

# Joint pairs connected by a rigid segment of nonzero rest length,
# with the segment length as (coef, bone) so tests can check both
# constancy and the expected value.
BONE_EDGES = (
    (0, 2, (1.0, 0)),
    (2, 3, (1.0, 1)),
    (3, 4, (1.0, 1)),
    (5, 6, (1.0, 3)),
    (6, 7, (1.0, 4)),
    (7, 8, (0.6, 4)),
    (9, 10, (1.0, 3)),
    (10, 11, (1.0, 4)),
    (11, 12, (0.6, 4)),
    (13, 14, (1.0, 6)),
    (14, 15, (1.0, 7)),
    (15, 16, (1.0, 8)),
    (16, 17, (0.1, 8)),
    (18, 19, (1.0, 6)),
    (19, 20, (1.0, 7)),
    (20, 21, (1.0, 8)),
    (21, 22, (0.1, 8)),
)

# Zero-length display connections so renders show a connected figure.
DISPLAY_EDGES = BONE_EDGES_DISPLAY = tuple(
    (i, j) for i, j, _ in BONE_EDGES
) + ((0, 1), (2, 5), (2, 9), (0, 13), (0, 18), (2, 23), (2, 24))

# Default orientation of the root frame, chosen so that at the neutral
# standing pose the figure is upright in camera coordinates (x right,
# y down, z into the scene): head above pelvis in the image.
DEFAULT_ROOT_ORIENTATION = (0.0, 0.0, _PI)
DEFAULT_HEIGHT_MM = 1700.0

# Offsets of a neutral standing pose: legs down, head up, arms toward
# the sides (the shoulder bounds do not let the arms hang fully down).
# Several entries sit exactly on their anatomical bound.
NEUTRAL_OFFSETS = np.zeros(N_OFFSETS)
NEUTRAL_OFFSETS[6] = -_PI / 2
NEUTRAL_OFFSETS[7] = -1.8
NEUTRAL_OFFSETS[13] = 1.8
NEUTRAL_OFFSETS[19] = -_PI / 2
NEUTRAL_OFFSETS[26] = -_PI / 2
NEUTRAL_OFFSETS[27] = -_PI
NEUTRAL_OFFSETS.flags.writeable = False


def _rot_x(r):
    c, s = math.cos(r), math.sin(r)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _rot_y(r):
    c, s = math.cos(r), math.sin(r)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rot_z(r):
    c, s = math.cos(r), math.sin(r)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def orientation_matrix(orientation) -> np.ndarray:
    """3x3 rotation from (rx, ry, rz) applied as Rz @ Ry @ Rx."""
    rx, ry, rz = orientation
    return _rot_z(rz) @ _rot_y(ry) @ _rot_x(rx)


@dataclass(frozen=True)
class SkeletonModel:
    """Immutable bundle of link table, bounds, ratios and root placement."""

    height_mm: float = DEFAULT_HEIGHT_MM
    bone_ratios: tuple = BONE_MEAN
    theta_bounds: tuple = THETA_BOUNDS
    root_position: tuple = (0.0, 0.0, 0.0)
    root_orientation: tuple = DEFAULT_ROOT_ORIENTATION
    bone_mean: tuple = BONE_MEAN
    bone_std: tuple = BONE_STD

    def __post_init__(self):
        if self.height_mm <= 0 or not math.isfinite(self.height_mm):
            raise ValueError(f"height_mm must be positive, got {self.height_mm}")
        if len(self.bone_ratios) != N_BONES:
            raise ValueError(f"expected {N_BONES} bone ratios, got {len(self.bone_ratios)}")
        if len(self.theta_bounds) != N_OFFSETS:
            raise ValueError(f"expected {N_OFFSETS} offset bounds, got {len(self.theta_bounds)}")
        for i, (ratio, mean, std) in enumerate(
            zip(self.bone_ratios, self.bone_mean, self.bone_std)
        ):
            lo = max(0.0, mean - 3.0 * std)
            hi = mean + 3.0 * std
            if not (lo - 1e-12 <= ratio <= hi + 1e-12):
                raise ValueError(
                    f"bone ratio {i} ({BONE_NAMES[i]}) = {ratio} outside "
                    f"[{lo}, {hi}]"
                )

    def with_root(self, position, orientation=None) -> "SkeletonModel":
        orientation = self.root_orientation if orientation is None else tuple(orientation)
        return replace(self, root_position=tuple(position), root_orientation=orientation)

    def root_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = orientation_matrix(self.root_orientation)
        m[:3, 3] = self.root_position
        return m

    def link_lengths(self) -> dict:
        """Resolved d and a values in millimeters for every link."""
        out = {}
        for r, (_, _, d_expr, a_expr, _, _) in enumerate(DH_TABLE):
            out[r] = (self._expr(d_expr), self._expr(a_expr))
        return out

    def _expr(self, expr) -> float:
        coef, bone = expr
        if bone is None:
            return 0.0
        return coef * self.bone_ratios[bone] * self.height_mm

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "height_mm": self.height_mm,
            "bone_names": list(BONE_NAMES),
            "bone_ratios": list(self.bone_ratios),
            "bone_mean": list(self.bone_mean),
            "bone_std": list(self.bone_std),
            "theta_bounds": [list(b) for b in self.theta_bounds],
            "joint_names": list(JOINT_NAMES),
            "joint_frame": list(JOINT_FRAME),
            "bone_edges": [[i, j, list(expr)] for i, j, expr in BONE_EDGES],
            "root_position": list(self.root_position),
            "root_orientation": list(self.root_orientation),
            "dh_rows": [
                {
                    "theta_base_deg": base,
                    "offset_index": idx,
                    "d": list(d),
                    "a": list(a),
                    "alpha_deg": alpha,
                    "parent": parent,
                }
                for base, idx, d, a, alpha, parent in DH_TABLE
            ],
        }

    def export_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def dh_transform(theta: float, d: float, a: float, alpha: float) -> np.ndarray:
    """Homogeneous transform of one link.

    Equivalent to Rot(z, theta) @ Trans(z, d) @ Trans(x, a) @ Rot(x, alpha),
    written in closed form.  Angles in radians, lengths in millimeters.
    """
    vals = (theta, d, a, alpha)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite DH parameters: {vals}")
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def check_theta(model: SkeletonModel, theta: np.ndarray) -> np.ndarray:
    """Validate offsets against bounds, clamping sub-tolerance violations.

    Violations within BOUND_CLAMP_TOL are clamped and reported through a
    single BoundsClampWarning carrying the count; anything larger raises
    BoundsViolationError naming the first offending offset.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_OFFSETS,):
        raise ValueError(f"theta must have shape ({N_OFFSETS},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite entries")
    lo = np.array([b[0] for b in model.theta_bounds])
    hi = np.array([b[1] for b in model.theta_bounds])
    below = lo - theta
    above = theta - hi
    worst = np.maximum(below, above)
    if np.any(worst > BOUND_CLAMP_TOL):
        idx = int(np.argmax(worst))
        raise BoundsViolationError(
            f"theta[{idx}] = {theta[idx]} outside "
            f"[{lo[idx]}, {hi[idx]}] by {worst[idx]:.3g}"
        )
    clamped = np.clip(theta, lo, hi)
    n_clamped = int(np.count_nonzero(clamped != theta))
    if n_clamped:
        warnings.warn(
            f"clamped {n_clamped} offset(s) violating bounds within tolerance",
            BoundsClampWarning,
            stacklevel=2,
        )
    return clamped


def link_frames(model: SkeletonModel, theta: np.ndarray) -> np.ndarray:
    """World transforms of all 34 link frames, shape (34, 4, 4)."""
    theta = check_theta(model, theta)
    frames = np.empty((N_LINKS, 4, 4))
    root = model.root_matrix()
    h = model.height_mm
    b = model.bone_ratios
    for r, (base_deg, idx, d_expr, a_expr, alpha_deg, parent) in enumerate(DH_TABLE):
        ang = math.radians(base_deg) + theta[idx]
        d = 0.0 if d_expr[1] is None else d_expr[0] * b[d_expr[1]] * h
        a = 0.0 if a_expr[1] is None else a_expr[0] * b[a_expr[1]] * h
        local = dh_transform(ang, d, a, math.radians(alpha_deg))
        parent_frame = root if parent < 0 else frames[parent]
        frames[r] = parent_frame @ local
    return frames


def forward_kinematics(model: SkeletonModel, theta: np.ndarray) -> np.ndarray:
    """3D positions of the 25 output joints, shape (25, 3), millimeters."""
    frames = link_frames(model, theta)
    joints = np.empty((N_JOINTS, 3))
    root = model.root_matrix()
    for j, fr in enumerate(JOINT_FRAME):
        src = root if fr < 0 else frames[fr]
        joints[j] = src[:3, 3]
    return joints


def forward_kinematics_seq(
    model: SkeletonModel, theta_seq: np.ndarray, root_seq: np.ndarray | None = None
) -> np.ndarray:
    """Vectorized FK over a trajectory.

    theta_seq has shape (T, 33); root_seq optionally overrides the model
    root position per frame, shape (T, 3).  Returns (T, 25, 3).
    """
    theta_seq = np.asarray(theta_seq, dtype=float)
    T = theta_seq.shape[0]
    out = np.empty((T, N_JOINTS, 3))
    for t in range(T):
        m = model
        if root_seq is not None:
            m = model.with_root(root_seq[t])
        out[t] = forward_kinematics(m, theta_seq[t])
    return out


def sample_theta(model: SkeletonModel, rng_seed: int) -> np.ndarray:
    """Offsets drawn uniformly within their bounds; reproducible per seed."""
    rng = np.random.default_rng(rng_seed)
    lo = np.array([b[0] for b in model.theta_bounds])
    hi = np.array([b[1] for b in model.theta_bounds])
    return rng.uniform(lo, hi)


def sample_bones(model: SkeletonModel, rng_seed: int) -> np.ndarray:
    """Bone ratios drawn from the per-bone normal prior.

    Gaussian at (mean, std), truncated by rejection to mean +- 3 std and
    to nonnegative values; reproducible per seed.
    """
    rng = np.random.default_rng(rng_seed)
    mean = np.array(model.bone_mean)
    std = np.array(model.bone_std)
    out = np.empty(N_BONES)
    for i in range(N_BONES):
        lo = max(0.0, mean[i] - 3.0 * std[i])
        hi = mean[i] + 3.0 * std[i]
        while True:
            v = rng.normal(mean[i], std[i])
            if lo <= v <= hi:
                out[i] = v
                break
    return out


def rest_pose(model: SkeletonModel | None = None) -> np.ndarray:
    """Joint positions at all-zero offsets."""
    model = model or SkeletonModel()
    return forward_kinematics(model, np.zeros(N_OFFSETS))
