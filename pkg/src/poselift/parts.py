"""Body-part taxonomy for movement recognition.

Sixteen parts, each with the set of skeleton joints it drives, the
rotation offsets that articulate it, and a movement-label vocabulary.
Vocabulary sizes sum to 154.  Labels beyond the conventional named ones
are numbered pattern slots.  ``SYNTH_LABELS`` is the three-label subset
the synthetic primitive generator can produce for every part.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BodyPartSpec:
    name: str
    joints: tuple          # indices into the 25-joint pose
    offsets: tuple         # rotation offsets that articulate this part
    indicator_joint: int   # most distal joint, used to calibrate primitives
    labels: tuple

    @property
    def vocab_size(self) -> int:
        return len(self.labels)


def _pad(labels, size, stem):
    labels = list(labels)
    k = 1
    while len(labels) < size:
        labels.append(f"{stem} Pattern {k}")
        k += 1
    return tuple(labels)


PARTS = (
    BodyPartSpec(
        "head", (2, 3, 4), (4, 5, 6), 4,
        _pad(["Head Turning Up", "Head Turning Down", "Head Turning Left",
              "Head Turning Right", "Head Circling"], 7, "Head"),
    ),
    BodyPartSpec(
        "neck", (2, 3), (2, 3), 3,
        ("Neck Moving Left", "Neck Moving Right", "Neck Circling",
         "Head Keeping Still", "Unknown"),
    ),
    BodyPartSpec(
        "l_shoulder", (5, 6), (7,), 6,
        _pad(["Left Shoulder Moving Upward", "Left Shoulder Moving Downward",
              "Left Shoulder Circling"], 5, "Left Shoulder"),
    ),
    BodyPartSpec(
        "r_shoulder", (9, 10), (13,), 10,
        _pad(["Right Shoulder Moving Upward", "Right Shoulder Moving Downward",
              "Right Shoulder Circling"], 5, "Right Shoulder"),
    ),
    BodyPartSpec(
        "l_upper_arm", (5, 6, 7), (8, 9), 7,
        _pad(["Left Arm Moving Upward", "Left Arm Moving Downward",
              "Left Arm Moving Left"], 11, "Left Upper Arm"),
    ),
    BodyPartSpec(
        "r_upper_arm", (9, 10, 11), (14, 15), 11,
        _pad(["Right Arm Moving Upward", "Right Arm Moving Downward",
              "Right Arm Moving Right"], 11, "Right Upper Arm"),
    ),
    BodyPartSpec(
        "l_lower_arm", (6, 7, 8), (10, 11, 12), 8,
        _pad(["Left Arm Moving Upward", "Left Arm Moving Downward",
              "Left Arm Moving Left"], 11, "Left Lower Arm"),
    ),
    BodyPartSpec(
        "r_lower_arm", (10, 11, 12), (16, 17, 18), 12,
        _pad(["Right Arm Moving Upward", "Right Arm Moving Downward",
              "Right Arm Moving Right"], 11, "Right Lower Arm"),
    ),
    BodyPartSpec(
        "torso", (0, 1, 2), (0, 1), 2,
        _pad(["Torso Bending", "Torso Unbending", "Torso Turning Left",
              "Torso Turning Right", "Torso Swing", "Somesault"], 10, "Torso"),
    ),
    BodyPartSpec(
        "hips", (13, 14, 18, 19), (19, 26), 14,
        _pad(["Hips Waving", "Hips Figure 8", "Hips Circling",
              "Hip Moving Up", "Hip Moving Down", "Hips Keeping Still"],
             10, "Hips"),
    ),
    BodyPartSpec(
        "l_upper_leg", (13, 14, 15), (20, 21), 15,
        _pad(["Left Leg Moving Upward", "Left Leg Moving Downward",
              "Left Leg Moving Left"], 15, "Left Upper Leg"),
    ),
    BodyPartSpec(
        "r_upper_leg", (18, 19, 20), (27, 28), 20,
        _pad(["Right Leg Moving Upward", "Right Leg Moving Downward",
              "Right Leg Moving Right"], 15, "Right Upper Leg"),
    ),
    BodyPartSpec(
        "l_lower_leg", (14, 15), (22,), 15,
        _pad(["Left Leg Moving Upward", "Left Leg Moving Downward",
              "Left Leg Moving Left"], 15, "Left Lower Leg"),
    ),
    BodyPartSpec(
        "r_lower_leg", (19, 20), (29,), 20,
        _pad(["Right Leg Moving Upward", "Right Leg Moving Downward",
              "Right Leg Moving Right"], 15, "Right Lower Leg"),
    ),
    BodyPartSpec(
        "l_foot", (15, 16, 17), (23, 24, 25), 17,
        ("Left Foot Extension", "Left Foot Flexion", "Left Foot Relaxed",
         "Unknown"),
    ),
    BodyPartSpec(
        "r_foot", (20, 21, 22), (30, 31, 32), 22,
        ("Right Foot Extension", "Right Foot Flexion", "Right Foot Relaxed",
         "Unknown"),
    ),
)

PART_NAMES = tuple(p.name for p in PARTS)
PART_BY_NAME = {p.name: p for p in PARTS}
TOTAL_LABELS = sum(p.vocab_size for p in PARTS)

N_GENRES = 9
GENRE_NAMES = (
    "ballet", "belly", "flamenco", "hiphop", "rumba",
    "swing", "tango", "tap", "waltz",
)

# Movement kinds the synthetic primitive generator supports for any part.
SYNTH_LABELS = ("up", "down", "circle")


def part_label_slices() -> dict:
    """Offset of each part's vocabulary inside the concatenated vector."""
    out = {}
    offset = 0
    for p in PARTS:
        out[p.name] = slice(offset, offset + p.vocab_size)
        offset += p.vocab_size
    return out


def get_part(name: str) -> BodyPartSpec:
    try:
        return PART_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown body part {name!r}") from None
