"""Multi-target box tracking with occlusion prediction and recovery.

Each dancer is followed by a color-histogram correlation tracker.  When
two boxes overlap and a tracker's motion turns against its stored
velocity, the track is declared occluded; its box is extrapolated with
the pre-occlusion velocity until it clears the other box, then the
dancer is re-identified by histogram correlation inside a search cone
along the motion direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import TrackLostError
from .frames import box_center, box_iou, pearson

TRACKING = "tracking"
OCCLUDED = "occluded"


def _hist(frame, box):
    """Histogram of a box, preferring the frame's sparse backend."""
    sparse = getattr(frame, "histogram_sparse", None)
    return sparse(box) if sparse is not None else frame.histogram(box)


@dataclass
class TrackerConfig:
    """Thresholds of the occlusion logic; all config-exposed."""

    iou_occlusion: float = 0.2      # overlap needed to suspect occlusion
    max_direction_deg: float = 60.0  # motion deviation that marks failure
    iou_clear: float = 0.05         # overlap under which occlusion ends
    min_correlation: float = 0.5    # histogram match to accept relocation
    velocity_ema: float = 0.5       # smoothing of the velocity estimate
    search_radius_scale: float = 2.0  # times max(w, l) when tracking
    cone_half_angle_deg: float = 30.0
    cone_radius_scale: float = 3.0  # times |v| * elapsed when relocating
    relocate_patience: int = 60     # frames to keep trying after clearance
    fallback_horizon: int = 30      # occlusion length guess when |v| ~ 0
    min_speed: float = 0.1          # below this the velocity is unusable
    min_step_px: float = 0.5        # steps shorter than this have no direction
    update_guard_inflate: float = 1.25  # box inflation for the update guard
    min_track_score: float = 0.5    # peak correlation under which the
                                    # appearance is considered lost


@dataclass
class TrackState:
    track_id: int
    box: tuple                      # (x, y, w, l)
    hist: np.ndarray                # reference appearance, sums to 1
    velocity: tuple = (0.0, 0.0)
    status: str = TRACKING
    predicted_end: int | None = None
    anchor_box: tuple | None = None  # box just before the occlusion
    anchor_frame: int | None = None
    occluded_by: int | None = None
    wait: int = 0
    last_step: tuple = (0.0, 0.0)
    last_score: float = 1.0

    def speed(self) -> float:
        return math.hypot(*self.velocity)


def _inflate(box, factor):
    x, y, w, l = box
    dw = w * (factor - 1.0) / 2.0
    dl = l * (factor - 1.0) / 2.0
    return (x - dw, y - dl, w + 2 * dw, l + 2 * dl)


def make_track(track_id, box, frame) -> TrackState:
    return TrackState(track_id=track_id, box=tuple(box), hist=_hist(frame, box))


def _search_peak(frame, ref_hist, box, radius):
    """Best-correlating placement of `box` within `radius` of its current
    position, found coarse-to-fine; the current position is scanned first
    so exact ties keep the box still."""
    x, y, w, l = box
    best_score = pearson(ref_hist, _hist(frame, box))
    best_off = (0, 0)

    def scan(center, half, step):
        nonlocal best_score, best_off
        cx, cy = center
        for dy in range(-half, half + 1, step):
            for dx in range(-half, half + 1, step):
                off = (cx + dx, cy + dy)
                if off == (0, 0) or off == best_off:
                    continue
                score = pearson(
                    ref_hist, _hist(frame, (x + off[0], y + off[1], w, l))
                )
                if score > best_score:
                    best_score = score
                    best_off = off

    r = int(math.ceil(radius))
    coarse = max(4, int(min(w, l) / 3))
    scan((0, 0), r, coarse)
    mid = max(1, coarse // 3)
    scan(best_off, coarse, mid)
    if mid > 1:
        scan(best_off, mid, 1)
    return (x + best_off[0], y + best_off[1], w, l), best_score


def step_track(state: TrackState, frame, other_boxes=(),
               config: TrackerConfig | None = None) -> TrackState:
    """Advance a tracking-state one frame.

    The box moves to the correlation peak within the search radius; the
    reference histogram and the velocity estimate are refreshed only
    while the box overlaps no other track.
    """
    if state.status != TRACKING:
        raise ValueError(f"step_track requires status {TRACKING!r}, got {state.status!r}")
    config = config or TrackerConfig()
    x, y, w, l = state.box
    fw, fh = frame.size
    if x + w <= 0 or y + l <= 0 or x >= fw or y >= fh:
        raise TrackLostError(
            f"track {state.track_id} left the image at box {state.box}"
        )
    radius = config.search_radius_scale * max(w, l)
    new_box, score = _search_peak(frame, state.hist, state.box, radius)
    old_c = box_center(state.box)
    new_c = box_center(new_box)
    step_vec = (new_c[0] - old_c[0], new_c[1] - old_c[1])
    # The appearance and velocity are refreshed only well clear of other
    # tracks; near-contact already risks picking up the neighbor.
    guard = _inflate(new_box, config.update_guard_inflate)
    overlapped = any(
        box_iou(guard, _inflate(other, config.update_guard_inflate)) > 0
        for other in other_boxes
    )
    hist = state.hist
    velocity = state.velocity
    if not overlapped:
        hist = _hist(frame, new_box)
        lam = config.velocity_ema
        velocity = (
            lam * step_vec[0] + (1 - lam) * state.velocity[0],
            lam * step_vec[1] + (1 - lam) * state.velocity[1],
        )
    return replace(state, box=new_box, hist=hist, velocity=velocity,
                   last_step=step_vec, last_score=score)


def direction_deviation_deg(step_vec, velocity, config: TrackerConfig) -> float:
    """Angle between the measured step and the stored velocity.

    A stalled box (no measurable step) while the target should be moving
    counts as a full reversal.
    """
    sp = math.hypot(*velocity)
    if sp < config.min_speed:
        return 0.0
    if math.hypot(*step_vec) < config.min_step_px:
        return 180.0
    dot = step_vec[0] * velocity[0] + step_vec[1] * velocity[1]
    cosang = dot / (math.hypot(*step_vec) * sp)
    return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))


def predict_end(state: TrackState, other_box, frame_index: int,
                config: TrackerConfig | None = None):
    """When and where the extrapolated box clears the other track's box.

    Returns (frame index, predicted box).  With an unusable velocity the
    answer is a fixed horizon at the anchor position.
    """
    config = config or TrackerConfig()
    if state.status != OCCLUDED:
        raise ValueError("predict_end requires an occluded track")
    base = state.anchor_box if state.anchor_box is not None else state.box
    t0 = state.anchor_frame if state.anchor_frame is not None else frame_index
    vx, vy = state.velocity
    if state.speed() < config.min_speed:
        return t0 + config.fallback_horizon, base
    x, y, w, l = base
    for dt in range(1, 1000):
        moved = (x + vx * dt, y + vy * dt, w, l)
        if box_iou(moved, other_box) <= config.iou_clear:
            return t0 + dt, moved
    return t0 + config.fallback_horizon, base


def detect_occlusion(states, frame_index: int,
                     config: TrackerConfig | None = None):
    """Pairwise overlap check with the direction-failure test.

    Returns the list of track ids transitioning to occluded; the states
    list is updated in place with occluded replacements.
    """
    config = config or TrackerConfig()
    events = []
    n = len(states)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = states[i], states[j]
            if a.status != TRACKING or b.status != TRACKING:
                continue
            if box_iou(a.box, b.box) <= config.iou_occlusion:
                continue
            for me, other, idx in ((a, b, i), (b, a, j)):
                if me.status != TRACKING:
                    continue
                dev = direction_deviation_deg(me.last_step, me.velocity, config)
                collapsed = me.last_score < config.min_track_score
                if dev > config.max_direction_deg or collapsed:
                    prev_center = box_center(me.box)
                    anchor = me.anchor_box or _step_back(me)
                    occluded = replace(
                        me,
                        status=OCCLUDED,
                        anchor_box=anchor,
                        anchor_frame=frame_index - 1,
                        occluded_by=other.track_id,
                        wait=0,
                        box=anchor,
                    )
                    end, _ = predict_end(occluded, other.box, frame_index, config)
                    occluded = replace(occluded, predicted_end=end)
                    states[idx] = occluded
                    events.append(me.track_id)
    return events


def _step_back(state: TrackState):
    """Box one step before the last (failed) move."""
    x, y, w, l = state.box
    return (x - state.last_step[0], y - state.last_step[1], w, l)


def cone_candidates(state: TrackState, elapsed: int,
                    config: TrackerConfig | None = None):
    """Candidate boxes inside the search cone along the stored direction."""
    config = config or TrackerConfig()
    x, y, w, l = state.anchor_box
    cx, cy = box_center(state.anchor_box)
    vx, vy = state.velocity
    speed = state.speed()
    if speed < config.min_speed:
        ux, uy = 1.0, 0.0
        radius = max(w, l)
    else:
        ux, uy = vx / speed, vy / speed
        radius = config.cone_radius_scale * speed * max(1, elapsed)
    half = math.radians(config.cone_half_angle_deg)
    step = max(2.0, min(w, l) / 2.0)
    boxes = [(cx + vx * elapsed - w / 2.0, cy + vy * elapsed - l / 2.0, w, l)]
    d = step
    while d <= radius:
        lateral_max = math.tan(half) * d
        m = 0.0
        while m <= lateral_max:
            for sign in ((1.0,) if m == 0 else (1.0, -1.0)):
                px = cx + ux * d - uy * m * sign
                py = cy + uy * d + ux * m * sign
                boxes.append((px - w / 2.0, py - l / 2.0, w, l))
            m += step
        d += step
    return boxes


def relocate(state: TrackState, frame, frame_index: int, candidates=None,
             config: TrackerConfig | None = None) -> TrackState:
    """Re-identify an occluded track once the overlap has ended.

    Scores candidate boxes (the search cone by default) by histogram
    correlation with the stored appearance; the winner must exceed the
    correlation threshold, otherwise the track stays occluded until the
    patience runs out.
    """
    config = config or TrackerConfig()
    if state.status != OCCLUDED:
        raise ValueError("relocate requires an occluded track")
    elapsed = frame_index - (state.anchor_frame or frame_index)
    if candidates is None:
        candidates = cone_candidates(state, elapsed, config)
    best_box, best_score = None, -2.0
    for box in candidates:
        score = pearson(state.hist, _hist(frame, box))
        if score > best_score:
            best_score = score
            best_box = tuple(box)
    if best_box is not None and best_score >= config.min_correlation:
        return replace(state, box=best_box, status=TRACKING, wait=0,
                       predicted_end=None, anchor_box=None,
                       anchor_frame=None, occluded_by=None,
                       last_step=(0.0, 0.0))
    wait = state.wait + 1
    if wait > config.relocate_patience:
        raise TrackLostError(
            f"track {state.track_id} not re-identified after {wait} attempts "
            f"(best correlation {best_score:.3f})"
        )
    return replace(state, wait=wait)


def track_sequence(frames, init_boxes: dict,
                   config: TrackerConfig | None = None):
    """Run the full tracking loop over a frame sequence.

    init_boxes maps track id to the frame-0 box.  Returns (records,
    events) where records is one dict per (frame, track) with the box
    and status, and events lists occlusion transitions.
    """
    config = config or TrackerConfig()
    states = [make_track(tid, box, frames[0])
              for tid, box in sorted(init_boxes.items())]
    records = [
        {"frame": 0, "track": s.track_id, "box": tuple(s.box),
         "status": s.status}
        for s in states
    ]
    events = []
    lost = set()
    for t in range(1, len(frames)):
        frame = frames[t]
        boxes_by_id = {s.track_id: s.box for s in states}
        # Stage 1: advance every live tracker.
        for i, s in enumerate(states):
            if s.track_id in lost or s.status != TRACKING:
                continue
            others = [b for tid, b in boxes_by_id.items() if tid != s.track_id]
            try:
                states[i] = step_track(s, frame, others, config)
            except TrackLostError:
                lost.add(s.track_id)
        # Stage 2: occlusion barrier over the fresh boxes.
        live = [s for s in states if s.track_id not in lost]
        for tid in detect_occlusion(live, t, config):
            events.append({"frame": t, "track": tid, "kind": "occluded"})
        by_id = {s.track_id: s for s in live}
        for i, s in enumerate(states):
            if s.track_id in by_id:
                states[i] = by_id[s.track_id]
        # Stage 3: occluded tracks extrapolate and try to come back.
        for i, s in enumerate(states):
            if s.track_id in lost or s.status != OCCLUDED:
                continue
            elapsed = t - s.anchor_frame
            ex, ey, w, l = s.anchor_box
            moved = (ex + s.velocity[0] * elapsed,
                     ey + s.velocity[1] * elapsed, w, l)
            other = next(
                (o for o in states if o.track_id == s.occluded_by), None
            )
            cleared = other is None or box_iou(moved, other.box) <= config.iou_clear
            s = replace(s, box=moved)
            if cleared or (s.predicted_end is not None and t >= s.predicted_end):
                try:
                    s = relocate(s, frame, t, config=config)
                    if s.status == TRACKING:
                        s = replace(s, hist=_hist(frame, s.box))
                        events.append(
                            {"frame": t, "track": s.track_id, "kind": "recovered"}
                        )
                except TrackLostError:
                    lost.add(s.track_id)
            states[i] = s
        for s in states:
            status = "lost" if s.track_id in lost else s.status
            records.append(
                {"frame": t, "track": s.track_id, "box": tuple(s.box),
                 "status": status}
            )
    return records, events
