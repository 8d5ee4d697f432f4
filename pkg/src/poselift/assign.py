"""Assignment of multi-person 2D pose detections to tracked boxes.

Detections arrive per frame as 25-joint candidates (external detector
exports are remapped first).  A candidate is eligible for a track when
its keypoint bounding box overlaps the track box; among eligible pairs,
assignment is greedy by histogram correlation against the track's
previous appearance, one candidate per track.  Tracks with no eligible
candidate re-emit their previous pose with decayed confidence.
"""

from __future__ import annotations

import numpy as np

from .frames import box_iou, pearson
from .skeleton import N_JOINTS
from .tracking import _hist

KEYPOINT_MAPPINGS = ("body25-identity", "coco17-lift")

# Canonical joint index for each directly-mapped entry of a 17-joint
# detector export (nose, eyes, ears, shoulders, elbows, wrists, hips,
# knees, ankles).
_COCO_DIRECT = {
    0: 3,    # nose -> head
    5: 5,    # left shoulder
    6: 9,    # right shoulder
    7: 6,    # left elbow
    8: 10,   # right elbow
    9: 7,    # left wrist
    10: 11,  # right wrist
    11: 13,  # left hip
    12: 18,  # right hip
    13: 14,  # left knee
    14: 19,  # right knee
    15: 15,  # left ankle
    16: 20,  # right ankle
}

GAP_FILL_DECAY = 0.5
SHORTLIST_IOU = 0.1


def remap_keypoints(raw, mapping: str) -> np.ndarray:
    """Convert a detector's keypoint list to the canonical 25-joint layout.

    "body25-identity" passes 25 joints through unchanged.  "coco17-lift"
    places the 13 directly corresponding joints, derives pelvis, torso,
    neck and head top from hips, shoulders, nose and eyes, and leaves
    the 8 joints without a counterpart (hands, heels, toes, collars) at
    confidence 0.
    """
    raw = np.asarray(raw, dtype=float)
    if mapping == "body25-identity":
        if raw.shape != (N_JOINTS, 3):
            raise ValueError(f"expected (25, 3) keypoints, got {raw.shape}")
        return raw.copy()
    if mapping == "coco17-lift":
        if raw.shape != (17, 3):
            raise ValueError(f"expected (17, 3) keypoints, got {raw.shape}")
        out = np.zeros((N_JOINTS, 3))
        for src, dst in _COCO_DIRECT.items():
            out[dst] = raw[src]

        def blend(*srcs):
            pts = raw[list(srcs)]
            conf = pts[:, 2].min()
            return np.array([pts[:, 0].mean(), pts[:, 1].mean(), conf])

        pelvis = blend(11, 12)
        neck = blend(5, 6)
        out[0] = pelvis
        out[2] = neck
        out[1] = np.array([
            (pelvis[0] + neck[0]) / 2.0,
            (pelvis[1] + neck[1]) / 2.0,
            min(pelvis[2], neck[2]),
        ])
        eyes = blend(1, 2)
        anchor = eyes if eyes[2] > 0 else raw[0]
        out[4] = np.array([
            anchor[0] + 0.8 * (anchor[0] - neck[0]),
            anchor[1] + 0.8 * (anchor[1] - neck[1]),
            min(anchor[2], neck[2]),
        ])
        return out
    raise ValueError(
        f"unknown keypoint mapping {mapping!r}; expected one of {KEYPOINT_MAPPINGS}"
    )


def keypoint_box(joints) -> tuple | None:
    """Bounding box of the visible joints, or None when nothing is visible."""
    joints = np.asarray(joints, dtype=float)
    vis = joints[:, 2] > 0
    if not vis.any():
        return None
    xs, ys = joints[vis, 0], joints[vis, 1]
    return (float(xs.min()), float(ys.min()),
            float(xs.max() - xs.min()), float(ys.max() - ys.min()))


def assign_frame(candidates, track_boxes: dict, track_hists: dict, frame):
    """One frame of detection-to-track assignment.

    candidates: list of (25, 3) arrays.  Returns {track_id: candidate
    index or None}.  Greedy over (correlation, overlap, candidate index);
    each candidate serves at most one track.
    """
    cand_boxes = [keypoint_box(c) for c in candidates]
    cand_hists = [
        None if b is None else _hist(frame, b) for b in cand_boxes
    ]
    pairs = []
    for tid in sorted(track_boxes):
        tbox = track_boxes[tid]
        for ci, cbox in enumerate(cand_boxes):
            if cbox is None:
                continue
            iou = box_iou(cbox, tbox)
            if iou <= SHORTLIST_IOU:
                continue
            corr = pearson(track_hists[tid], cand_hists[ci])
            pairs.append((corr, iou, ci, tid))
    # Highest correlation wins; ties prefer larger overlap, then the
    # lower candidate index, then the lower track id.
    pairs.sort(key=lambda p: (-p[0], -p[1], p[2], p[3]))
    assigned = {tid: None for tid in track_boxes}
    used = set()
    taken = set()
    for corr, iou, ci, tid in pairs:
        if tid in taken or ci in used:
            continue
        assigned[tid] = ci
        used.add(ci)
        taken.add(tid)
    return assigned


def assign_sequence(detections, track_records, frames, mapping="body25-identity"):
    """Assign detections to tracks over a whole clip.

    detections: per frame, a list of raw keypoint arrays; track_records:
    the tracker's per-frame records; frames: the image sequence.
    Returns {track_id: (uv (T, 25, 2), conf (T, 25), flags (T,))} where a
    flag marks a gap-filled frame.
    """
    T = len(frames)
    boxes_by_frame: dict = {}
    for rec in track_records:
        boxes_by_frame.setdefault(rec["frame"], {})[rec["track"]] = rec["box"]
    track_ids = sorted(boxes_by_frame.get(0, {}))
    out = {
        tid: (np.zeros((T, N_JOINTS, 2)), np.zeros((T, N_JOINTS)),
              np.zeros(T, dtype=bool))
        for tid in track_ids
    }
    hists = {
        tid: _hist(frames[0], boxes_by_frame[0][tid]) for tid in track_ids
    }
    prev_pose = {tid: None for tid in track_ids}
    for t in range(T):
        raw = detections[t] if t < len(detections) else []
        cands = [remap_keypoints(r, mapping) for r in raw]
        track_boxes = {
            tid: box for tid, box in boxes_by_frame.get(t, {}).items()
            if tid in out
        }
        assigned = assign_frame(cands, track_boxes, hists, frames[t])
        for tid in track_ids:
            uv, conf, flags = out[tid]
            ci = assigned.get(tid)
            if ci is not None:
                pose = cands[ci]
                uv[t] = pose[:, :2]
                conf[t] = pose[:, 2]
                prev_pose[tid] = pose.copy()
                box = keypoint_box(pose)
                if box is not None:
                    hists[tid] = _hist(frames[t], box)
            elif prev_pose[tid] is not None:
                pose = prev_pose[tid].copy()
                pose[:, 2] *= GAP_FILL_DECAY
                uv[t] = pose[:, :2]
                conf[t] = pose[:, 2]
                flags[t] = True
                prev_pose[tid] = pose
            else:
                flags[t] = True
    return out
