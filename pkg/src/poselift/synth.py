"""Synthetic ground-truth generators.

Produces the oracles the test suite measures against: smooth articulated
motion clips with exact 3D/2D/camera triples, labeled single-part
movement primitives, genre-specific label streams, and multi-actor
crossing scenes with known boxes and identities.  Depends only on the
skeleton, camera, frame, and taxonomy modules, never on the estimators
it is used to verify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import parts as bp
from .camera import CameraParams, project
from .frames import SyntheticFrame, box_iou
from .skeleton import (
    BONE_MEAN,
    DEFAULT_HEIGHT_MM,
    NEUTRAL_OFFSETS,
    N_OFFSETS,
    SkeletonModel,
    THETA_BOUNDS,
    forward_kinematics_seq,
)

MIN_CLIP_LEN = 7  # one full optimization window


@dataclass
class MotionConfig:
    n_frames: int = 31
    seed: int = 0
    image_size: tuple = (256, 256)
    keyframe_every: int = 10
    theta_amplitude: float = 0.3   # fraction of each bound half-width
    max_theta_step: float = 0.08   # radians per frame
    root_amplitude_mm: float = 150.0
    base_depth_mm: float = 4000.0
    height_mm: float = DEFAULT_HEIGHT_MM
    bone_ratios: tuple | None = None
    focal_px: float | None = None
    noise_sigma: float = 0.0


@dataclass
class SynthClip:
    theta: np.ndarray            # (T, 33)
    bone_ratios: np.ndarray      # (9,)
    root: np.ndarray             # (T, 3) millimeters
    height_mm: float
    camera: CameraParams
    poses3d: np.ndarray          # (T, 25, 3)
    poses2d: np.ndarray          # (T, 25, 2) noise-free projection
    conf: np.ndarray             # (T, 25)
    noise_sigma: float
    poses2d_noisy: np.ndarray    # equals poses2d when sigma is 0
    seed: int
    labels: dict | None = None   # movement annotation, when generated
    genre: int | None = None

    @property
    def n_frames(self) -> int:
        return self.theta.shape[0]

    def model(self) -> SkeletonModel:
        return SkeletonModel(
            height_mm=self.height_mm, bone_ratios=tuple(self.bone_ratios)
        )


def _default_camera(config: MotionConfig) -> CameraParams:
    w, h = config.image_size
    f = config.focal_px if config.focal_px is not None else 1.2 * w
    return CameraParams(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0)


def _spline_track(rng, n_frames, every, lo, hi, center, amplitude):
    """Smooth bounded curves through random keyframes, one column per dim."""
    kf_idx = list(range(0, n_frames, every))
    if kf_idx[-1] != n_frames - 1:
        kf_idx.append(n_frames - 1)
    half = (hi - lo) / 2.0
    values = center + rng.uniform(-1.0, 1.0, size=(len(kf_idx), center.size)) * (
        amplitude * half
    )
    values = np.clip(values, lo, hi)
    if len(kf_idx) == 1:
        return np.tile(values, (n_frames, 1))
    spline = CubicSpline(kf_idx, values, axis=0)
    return spline(np.arange(n_frames))


def _limit_steps(track, cap):
    out = track.copy()
    for t in range(1, len(out)):
        step = np.clip(track[t] - out[t - 1], -cap, cap)
        out[t] = out[t - 1] + step
    return out


def _finish_clip(theta, root, bones, config, rng, labels=None, genre=None):
    lo = np.array([b[0] for b in THETA_BOUNDS])
    hi = np.array([b[1] for b in THETA_BOUNDS])
    theta = np.clip(theta, lo, hi)
    model = SkeletonModel(height_mm=config.height_mm, bone_ratios=tuple(bones))
    poses3d = forward_kinematics_seq(model, theta, root)
    camera = _default_camera(config)
    poses2d = project(poses3d, camera)
    conf = np.ones(poses2d.shape[:2])
    if config.noise_sigma > 0:
        noisy = poses2d + rng.normal(0.0, config.noise_sigma, size=poses2d.shape)
    else:
        noisy = poses2d.copy()
    return SynthClip(
        theta=theta,
        bone_ratios=np.asarray(bones, dtype=float),
        root=root,
        height_mm=config.height_mm,
        camera=camera,
        poses3d=poses3d,
        poses2d=poses2d,
        conf=conf,
        noise_sigma=config.noise_sigma,
        poses2d_noisy=noisy,
        seed=config.seed,
        labels=labels,
        genre=genre,
    )


def gen_motion(config: MotionConfig | None = None, **overrides) -> SynthClip:
    """Random smooth whole-body motion in front of a fixed camera."""
    config = config or MotionConfig()
    if overrides:
        config = dataclass_replace(config, **overrides)
    if config.n_frames < MIN_CLIP_LEN:
        raise ValueError(
            f"n_frames must be at least {MIN_CLIP_LEN}, got {config.n_frames}"
        )
    rng = np.random.default_rng(config.seed)
    lo = np.array([b[0] for b in THETA_BOUNDS])
    hi = np.array([b[1] for b in THETA_BOUNDS])
    theta = _spline_track(
        rng, config.n_frames, config.keyframe_every, lo, hi,
        NEUTRAL_OFFSETS.copy(), config.theta_amplitude,
    )
    theta = _limit_steps(theta, config.max_theta_step)
    bones = (
        np.asarray(config.bone_ratios, dtype=float)
        if config.bone_ratios is not None
        else np.array(BONE_MEAN)
    )
    base = np.array([0.0, 0.0, config.base_depth_mm])
    amp = config.root_amplitude_mm
    root = _spline_track(
        rng, config.n_frames, config.keyframe_every,
        base - amp, base + amp, base, 1.0,
    )
    root = _limit_steps(root, 25.0)
    return _finish_clip(theta, root, bones, config, rng)


def dataclass_replace(config, **overrides):
    from dataclasses import replace

    return replace(config, **overrides)


# ---------------------------------------------------------------------------
# Single-part movement primitives


def _up_coordinate(pose, joint):
    # Image-up is negative camera y.
    return -pose[joint, 1]


def _primitive_axis(part: bp.BodyPartSpec, model: SkeletonModel):
    """Pick the offset with the largest vertical authority over the
    part's indicator joint, measured across the offset's whole range."""
    from .skeleton import forward_kinematics

    scores = []
    for off in part.offsets:
        lo, hi = THETA_BOUNDS[off]
        ups = []
        base = NEUTRAL_OFFSETS.copy()
        for v in np.linspace(lo, hi, 11):
            base[off] = v
            ups.append(
                _up_coordinate(forward_kinematics(model, base), part.indicator_joint)
            )
        scores.append(np.ptp(ups))
    return part.offsets[int(np.argmax(scores))]


def _monotone_span(part: bp.BodyPartSpec, model: SkeletonModel, axis: int):
    """Largest interval of the axis offset with strictly monotone height."""
    from .skeleton import forward_kinematics

    lo, hi = THETA_BOUNDS[axis]
    grid = np.linspace(lo, hi, 121)
    ups = []
    base = NEUTRAL_OFFSETS.copy()
    for v in grid:
        base[axis] = v
        ups.append(_up_coordinate(forward_kinematics(model, base), part.indicator_joint))
    ups = np.array(ups)
    signs = np.sign(np.diff(ups))
    best = (0, 0)
    start = 0
    for i in range(1, len(signs)):
        if signs[i] != signs[i - 1] or signs[i] == 0:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = i
    if len(signs) - start > best[1] - best[0]:
        best = (start, len(signs))
    a, b = grid[best[0]], grid[min(best[1], len(grid) - 1)]
    if ups[min(best[1], len(grid) - 1)] < ups[best[0]]:
        a, b = b, a  # orient so the ramp a -> b goes up
    return a, b


_SPAN_CACHE: dict = {}


def _part_span(part_name: str, model: SkeletonModel):
    key = (part_name, model.height_mm, model.bone_ratios)
    if key not in _SPAN_CACHE:
        part = bp.get_part(part_name)
        axis = _primitive_axis(part, model)
        _SPAN_CACHE[key] = (axis, _monotone_span(part, model, axis))
    return _SPAN_CACHE[key]


def gen_primitive(
    part_name: str,
    label: str,
    n_frames: int = 40,
    seed: int = 0,
    config: MotionConfig | None = None,
) -> SynthClip:
    """One clip performing a single labeled movement of one body part.

    Supported labels: "up" (indicator joint rises every frame), "down"
    (reverse ramp), "circle" (oscillation, looping through a second
    offset when the part has one).  All other offsets stay at the
    neutral pose; the label is active on every frame.
    """
    if label not in bp.SYNTH_LABELS:
        raise ValueError(
            f"unsupported primitive label {label!r}; expected one of {bp.SYNTH_LABELS}"
        )
    part = bp.get_part(part_name)
    config = config or MotionConfig(n_frames=n_frames, seed=seed)
    config = dataclass_replace(config, n_frames=n_frames, seed=seed, noise_sigma=0.0)
    if n_frames < 2:
        raise ValueError("primitive clips need at least 2 frames")
    rng = np.random.default_rng(seed)
    model = SkeletonModel(height_mm=config.height_mm)
    axis, (a, b) = _part_span(part_name, model)

    # Per-clip jitter: shrink the span a little and vary the speed profile.
    shrink = rng.uniform(0.0, 0.15, size=2)
    span = b - a
    a_j = a + shrink[0] * span
    b_j = b - shrink[1] * span
    t = np.linspace(0.0, 1.0, n_frames)
    theta = np.tile(NEUTRAL_OFFSETS.copy(), (n_frames, 1))
    if label == "up":
        theta[:, axis] = a_j + (b_j - a_j) * t
    elif label == "down":
        theta[:, axis] = b_j - (b_j - a_j) * t
    else:  # circle
        mid = 0.5 * (a_j + b_j)
        amp = 0.5 * abs(b_j - a_j)
        phase = rng.uniform(0.0, 2 * math.pi)
        theta[:, axis] = mid + amp * np.sin(2 * math.pi * 1.5 * t + phase)
        others = [o for o in part.offsets if o != axis]
        if others:
            o = others[0]
            olo, ohi = THETA_BOUNDS[o]
            oc = NEUTRAL_OFFSETS[o]
            oamp = 0.3 * min(ohi - oc, oc - olo)
            if oamp > 0:
                theta[:, o] = oc + oamp * np.cos(2 * math.pi * 1.5 * t + phase)
    root = np.tile([0.0, 0.0, config.base_depth_mm], (n_frames, 1))
    label_matrix = np.zeros((n_frames, len(bp.SYNTH_LABELS)))
    label_matrix[:, bp.SYNTH_LABELS.index(label)] = 1.0
    labels = {"part": part_name, "kind": label, "matrix": label_matrix}
    return _finish_clip(theta, root, np.array(BONE_MEAN), config, rng, labels=labels)


def gen_primitive_dataset(
    part_name: str,
    n_frames: int = 40,
    clips_per_label: int = 20,
    seed: int = 0,
    labels=bp.SYNTH_LABELS,
):
    """Balanced primitive clips for one part: clips_per_label per label."""
    clips = []
    for li, label in enumerate(labels):
        for k in range(clips_per_label):
            clips.append(
                gen_primitive(
                    part_name, label, n_frames=n_frames,
                    seed=seed * 100_003 + li * 1009 + k,
                )
            )
    return clips


# ---------------------------------------------------------------------------
# Genre label streams


def genre_profile(genre: int, part: bp.BodyPartSpec):
    """Deterministic dwell period and label cycle for one genre and part."""
    e = bp.PART_NAMES.index(part.name)
    period = 5 + (3 * genre + 2 * e) % 13
    order = [(genre + k) % len(bp.SYNTH_LABELS) for k in range(len(bp.SYNTH_LABELS))]
    return period, order


def gen_genre_labels(genre: int, n_frames: int, seed: int, flip_prob=0.02):
    """One clip's concatenated per-part label matrix for a genre, (T, 154).

    Each part cycles through its three primitive slots with a
    genre-specific dwell period and phase; a small flip noise keeps
    clips of the same genre from being identical.
    """
    if not 0 <= genre < bp.N_GENRES:
        raise ValueError(f"genre must be in 0..{bp.N_GENRES - 1}, got {genre}")
    rng = np.random.default_rng(seed)
    slices = bp.part_label_slices()
    out = np.zeros((n_frames, bp.TOTAL_LABELS))
    for part in bp.PARTS:
        period, order = genre_profile(genre, part)
        phase = rng.integers(0, period)
        sl = slices[part.name]
        for t in range(n_frames):
            k = ((t + phase) // period) % len(order)
            out[t, sl.start + order[k]] = 1.0
    flips = rng.random(out.shape) < flip_prob
    out = np.where(flips, 1.0 - out, out)
    return out


def gen_genre_dataset(clips_per_genre=12, n_frames=40, seed=0):
    """Labeled genre clips: list of (label_matrix, genre)."""
    data = []
    for g in range(bp.N_GENRES):
        for k in range(clips_per_genre):
            data.append(
                (gen_genre_labels(g, n_frames, seed * 7919 + g * 101 + k), g)
            )
    return data


# ---------------------------------------------------------------------------
# Crossing scenes for the tracker and the assigner


@dataclass
class CrossingConfig:
    n_actors: int = 2
    n_frames: int = 40
    image_size: tuple = (512, 512)
    seed: int = 0
    speed_range: tuple = (3.5, 7.0)
    box_w_range: tuple = (34.0, 50.0)
    box_l_range: tuple = (64.0, 92.0)
    crossing: bool = True
    detection_jitter_px: float = 1.0
    min_visible_fraction: float = 0.35


@dataclass
class CrossingScene:
    config: CrossingConfig
    colors: np.ndarray           # (N, 3) RGB in 0..1
    boxes: np.ndarray            # (T, N, 4) ground-truth boxes
    velocities: np.ndarray       # (N, 2) px/frame
    frames: list                 # SyntheticFrame per frame
    detections: list             # per frame: list of (joints25x3, actor_id)
    first_contact: int | None    # first frame with IoU > 0 between 0 and 1
    first_iou02: int | None      # first frame with IoU > 0.2
    gt_end: int | None           # first frame after contact with IoU <= 0.05
    visible_fraction: np.ndarray  # (T, N)

    @property
    def init_boxes(self):
        return {i: tuple(self.boxes[0, i]) for i in range(self.boxes.shape[1])}


# Canonical detection layout inside a unit box, (x, y) per joint.
_STICK = np.array([
    (0.50, 0.55), (0.50, 0.52), (0.50, 0.30), (0.50, 0.20), (0.50, 0.08),
    (0.35, 0.30), (0.26, 0.44), (0.20, 0.58), (0.18, 0.64),
    (0.65, 0.30), (0.74, 0.44), (0.80, 0.58), (0.82, 0.64),
    (0.43, 0.55), (0.43, 0.75), (0.43, 0.94), (0.40, 0.97), (0.47, 0.98),
    (0.57, 0.55), (0.57, 0.75), (0.57, 0.94), (0.60, 0.97), (0.53, 0.98),
    (0.45, 0.30), (0.55, 0.30),
])


def _pose_in_box(box, rng, jitter):
    x, y, w, l = box
    joints = np.empty((25, 3))
    joints[:, 0] = x + _STICK[:, 0] * w
    joints[:, 1] = y + _STICK[:, 1] * l
    if jitter > 0:
        joints[:, :2] += rng.normal(0.0, jitter, size=(25, 2))
    joints[:, 2] = 1.0
    return joints


def _visible_fraction(rects, k):
    """Visible area fraction of rect k given painter-ordered occluders above it."""
    from .frames import _area, _intersect, _union_area

    rect = rects[k]
    occ = [_intersect(r, rect) for r in rects[k + 1 :]]
    area = _area(rect)
    if area == 0:
        return 0.0
    return max(0.0, (area - _union_area(occ)) / area)


def gen_crossing_scene(config: CrossingConfig | None = None, **overrides) -> CrossingScene:
    """Solid-color actors moving at constant velocity, crossing mid-clip.

    Actor 0 is always drawn in front.  Ground-truth boxes, identities,
    per-frame visibility, and the contact/separation frames are recorded.
    With crossing=False the paths are parallel and never overlap.
    """
    config = config or CrossingConfig()
    if overrides:
        config = dataclass_replace(config, **overrides)
    if not 2 <= config.n_actors <= 4:
        raise ValueError(f"n_actors must be 2..4, got {config.n_actors}")
    rng = np.random.default_rng(config.seed)
    W, H = config.image_size
    T = config.n_frames
    N = config.n_actors

    # Distinct hues, one per actor.
    base_hue = rng.uniform(0.0, 1.0)
    hues = (base_hue + np.arange(N) / N + rng.uniform(-0.06, 0.06, N)) % 1.0
    colors = np.array([_hsv_color(h, rng) for h in hues])

    sizes = np.stack(
        [
            rng.uniform(*config.box_w_range, size=N),
            rng.uniform(*config.box_l_range, size=N),
        ],
        axis=1,
    )

    for _ in range(200):
        centers, velocities = _plan_paths(config, rng, W, H, T, N, sizes)
        if centers is not None:
            break
    else:
        raise RuntimeError("could not place actors inside the image")

    boxes = np.empty((T, N, 4))
    for t in range(T):
        for i in range(N):
            cx, cy = centers[i] + velocities[i] * t
            boxes[t, i] = (cx - sizes[i, 0] / 2, cy - sizes[i, 1] / 2,
                           sizes[i, 0], sizes[i, 1])

    frames = []
    visible = np.empty((T, N))
    detections = []
    det_rng = np.random.default_rng(config.seed + 1)
    for t in range(T):
        # Painter order back-to-front: higher actor index is deeper.
        order = list(range(N - 1, -1, -1))
        rects = [tuple(boxes[t, i]) for i in order]
        frame = SyntheticFrame(
            (W, H), [(tuple(boxes[t, i]), tuple(colors[i])) for i in order]
        )
        frames.append(frame)
        for slot, i in enumerate(order):
            visible[t, i] = _visible_fraction(rects, slot)
        dets = []
        for i in range(N):
            if visible[t, i] >= config.min_visible_fraction:
                dets.append((_pose_in_box(boxes[t, i], det_rng,
                                          config.detection_jitter_px), i))
        det_rng.shuffle(dets)
        detections.append(dets)

    ious = np.array(
        [box_iou(tuple(boxes[t, 0]), tuple(boxes[t, 1])) for t in range(T)]
    )
    first_contact = first_iou02 = gt_end = None
    if np.any(ious > 0):
        first_contact = int(np.argmax(ious > 0))
        if np.any(ious > 0.2):
            first_iou02 = int(np.argmax(ious > 0.2))
        peak = int(np.argmax(ious))
        after = np.flatnonzero(ious[peak:] <= 0.05)
        if after.size:
            gt_end = peak + int(after[0])
    return CrossingScene(
        config=config,
        colors=colors,
        boxes=boxes,
        velocities=velocities,
        frames=frames,
        detections=detections,
        first_contact=first_contact,
        first_iou02=first_iou02,
        gt_end=gt_end,
        visible_fraction=visible,
    )


def _hsv_color(hue, rng):
    s = rng.uniform(0.85, 1.0)
    v = rng.uniform(0.75, 1.0)
    i = int(hue * 6.0) % 6
    f = hue * 6.0 - int(hue * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _plan_paths(config, rng, W, H, T, N, sizes):
    tc = T // 2 + int(rng.integers(-2, 3))
    cx = rng.uniform(0.42 * W, 0.58 * W)
    cy = rng.uniform(0.42 * H, 0.58 * H)
    speeds = rng.uniform(*config.speed_range, size=N)
    phi0 = rng.uniform(0.0, 2 * math.pi)
    angles = [phi0]
    for i in range(1, N):
        # Approach directions at least 90 degrees apart from actor 0.
        angles.append(phi0 + math.pi + rng.uniform(-math.pi / 2, math.pi / 2))
    velocities = np.stack(
        [s * np.array([math.cos(a), math.sin(a)]) for s, a in zip(speeds, angles)]
    )
    if config.crossing:
        meet_offsets = rng.uniform(-8.0, 8.0, size=(N, 2))
        meet_offsets[0] = 0.0
    else:
        # Parallel lanes far apart.
        lane = max(sizes[:, 1].max(), sizes[:, 0].max()) + 30.0
        velocities[1:] = velocities[0]
        meet_offsets = np.zeros((N, 2))
        perp = np.array([-velocities[0, 1], velocities[0, 0]])
        norm = np.linalg.norm(perp)
        perp = perp / norm if norm > 0 else np.array([0.0, 1.0])
        for i in range(1, N):
            meet_offsets[i] = perp * lane * i
    centers = np.array([cx, cy]) + meet_offsets - velocities * tc
    # All actors must stay inside the image with a margin for all frames.
    for t in (0, T - 1):
        pos = centers + velocities * t
        for i in range(N):
            hw, hl = sizes[i] / 2.0
            x, y = pos[i]
            if not (hw + 2 <= x <= W - hw - 2 and hl + 2 <= y <= H - hl - 2):
                return None, None
    return centers, velocities
