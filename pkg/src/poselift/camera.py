"""Pinhole projection between camera-space millimeters and image pixels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCameraError

# Points closer than this to the image plane cannot be projected.
Z_MIN_MM = 100.0


@dataclass(frozen=True)
class CameraParams:
    """Ideal pinhole intrinsics: focal lengths and principal point, pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite camera parameters: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: {self.fx}, {self.fy}")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]),
                   cx=float(d["cx"]), cy=float(d["cy"]))


def project(points: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Project camera-space points to pixel coordinates.

    points has shape (..., 3); returns (..., 2) with
    u = fx * X / Z + cx and v = fy * Y / Z + cy.  Raises
    BehindCameraError naming the first offending index when any
    Z <= Z_MIN_MM.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) points, got {pts.shape}")
    z = pts[..., 2]
    bad = z <= Z_MIN_MM
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise BehindCameraError(
            f"point {idx} has Z = {z[bad].flat[0]:.3f} mm <= {Z_MIN_MM} mm"
        )
    uv = np.empty(pts.shape[:-1] + (2,))
    uv[..., 0] = cam.fx * pts[..., 0] / z + cam.cx
    uv[..., 1] = cam.fy * pts[..., 1] / z + cam.cy
    return uv


def project_pose(pose3d: np.ndarray, cam: CameraParams):
    """Project a (25, 3) pose; returns ((25, 2) pixels, (25,) confidences)."""
    uv = project(pose3d, cam)
    return uv, np.ones(uv.shape[:-1])


def back_project(uv: np.ndarray, z: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Invert the projection given known depths; (..., 2) + (...) -> (..., 3)."""
    uv = np.asarray(uv, dtype=float)
    z = np.asarray(z, dtype=float)
    out = np.empty(uv.shape[:-1] + (3,))
    out[..., 0] = (uv[..., 0] - cam.cx) * z / cam.fx
    out[..., 1] = (uv[..., 1] - cam.cy) * z / cam.fy
    out[..., 2] = z
    return out


def smooth_camera(history) -> CameraParams:
    """Arithmetic mean of a window of per-step camera estimates."""
    history = list(history)
    if not history:
        raise ValueError("camera history is empty")
    arr = np.stack([c.as_array() for c in history])
    fx, fy, cx, cy = arr.mean(axis=0)
    return CameraParams(fx=fx, fy=fy, cx=cx, cy=cy)
