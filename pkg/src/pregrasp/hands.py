"""Builder for the bundled reference hand description.

The palm frame has ``x`` towards the thumb, ``y`` along the fingers and
``z`` out of the back of the hand, so the grasping side of the palm faces
``-z``. Fingers flex about ``-x``, curling towards the palm side. The layout
is a simplified five-finger hand with capsule phalanges and a box palm;
``data/reference_hand.json`` is generated from :func:`reference_hand_dict`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .transforms import axis_angle_to_quat

PALM_HALF = (0.043, 0.048, 0.012)
FINGER_RADIUS = 0.0085
THUMB_RADIUS = 0.0095
# name: (x offset at the knuckle line, abduction?, phalanx lengths)
FINGERS = {
    "index": (0.031, True, (0.045, 0.025, 0.022)),
    "middle": (0.009, False, (0.047, 0.027, 0.022)),
    "ring": (-0.013, True, (0.045, 0.025, 0.022)),
    "little": (-0.035, True, (0.038, 0.021, 0.019)),
}
THUMB_LENGTHS = (0.040, 0.032)
FLEX = [-1.0, 0.0, 0.0]
# surface samples: roughly 5 mm spacing on the fingers, coarser on the palm
PALM_SAMPLES = 400
FINGER_SAMPLES = (96, 72, 72)
THUMB_SAMPLES = (96, 80)


def _link(name, parent, position, joint=None, quaternion=(1.0, 0.0, 0.0, 0.0), collision=(), samples=0):
    out = {
        "name": name,
        "parent": parent,
        "origin": {"position": [float(v) for v in position], "quaternion": [float(v) for v in quaternion]},
        "joint": joint or {"type": "fixed"},
        "collision": list(collision),
        "surface_samples": samples,
    }
    return out


def _revolute(axis, lo, hi):
    return {"type": "revolute", "axis": [float(v) for v in axis], "limits": [float(lo), float(hi)]}


def _capsule(length, radius):
    return {"type": "capsule", "from": [0.0, 0.0, 0.0], "to": [0.0, float(length), 0.0], "radius": radius}


def reference_hand_dict() -> dict:
    hx, hy, hz = PALM_HALF
    links = [
        _link(
            "palm",
            None,
            (0.0, 0.0, 0.0),
            collision=[
                {
                    "type": "box",
                    "center": [0.0, hy, 0.0],
                    "half_extents": [hx, hy, hz],
                    "quaternion": [1.0, 0.0, 0.0, 0.0],
                }
            ],
            samples=PALM_SAMPLES,
        )
    ]
    keypoints = [
        {"name": "wrist", "link": "palm", "offset": [0.0, 0.0, 0.0]},
        {"name": "palm_face", "link": "palm", "offset": [0.0, hy, -hz]},
        {"name": "palm_thumb_top", "link": "palm", "offset": [hx - 0.003, 2 * hy - 0.006, 0.0]},
        {"name": "palm_little_top", "link": "palm", "offset": [-hx + 0.003, 2 * hy - 0.006, 0.0]},
        {"name": "palm_thumb_bottom", "link": "palm", "offset": [hx - 0.003, 0.01, 0.0]},
        {"name": "palm_little_bottom", "link": "palm", "offset": [-hx + 0.003, 0.01, 0.0]},
    ]
    for name, (x, abduct, lengths) in FINGERS.items():
        parent = "palm"
        knuckle = (x, 2 * hy, 0.0)
        if abduct:
            links.append(_link(f"{name}_base", "palm", knuckle, _revolute([0.0, 0.0, 1.0], -0.35, 0.35)))
            parent = f"{name}_base"
            knuckle = (0.0, 0.0, 0.0)
        lo = (-0.26, 0.0, 0.0)
        hi = (1.57, 1.75, 1.57)
        seg_names = ("proximal", "middle", "distal")
        samples = FINGER_SAMPLES
        for k, seg in enumerate(seg_names):
            origin = knuckle if k == 0 else (0.0, lengths[k - 1], 0.0)
            links.append(
                _link(
                    f"{name}_{seg}",
                    parent,
                    origin,
                    _revolute(FLEX, lo[k], hi[k]),
                    collision=[_capsule(lengths[k], FINGER_RADIUS)],
                    samples=samples[k],
                )
            )
            parent = f"{name}_{seg}"
        L3 = lengths[2]
        keypoints += [
            {"name": f"{name}_mcp", "link": f"{name}_proximal", "offset": [0.0, 0.0, 0.0]},
            {"name": f"{name}_pip", "link": f"{name}_middle", "offset": [0.0, 0.0, 0.0]},
            {"name": f"{name}_dip", "link": f"{name}_distal", "offset": [0.0, 0.0, 0.0]},
            {"name": f"{name}_tip", "link": f"{name}_distal", "offset": [0.0, L3 + FINGER_RADIUS, 0.0]},
            {"name": f"{name}_pad", "link": f"{name}_distal", "offset": [0.0, 0.5 * L3, -FINGER_RADIUS]},
        ]

    # thumb: rotates about the palm's long axis into opposition, then flexes
    thumb_dir = axis_angle_to_quat(np.array([0.0, 0.0, -np.pi / 3]))
    links.append(_link("thumb_base", "palm", (hx, 0.022, -0.004), _revolute([0.0, 1.0, 0.0], 0.0, 1.4)))
    links.append(
        _link(
            "thumb_proximal",
            "thumb_base",
            (0.0, 0.0, 0.0),
            _revolute(FLEX, -0.3, 1.2),
            quaternion=thumb_dir,
            collision=[_capsule(THUMB_LENGTHS[0], THUMB_RADIUS)],
            samples=THUMB_SAMPLES[0],
        )
    )
    links.append(
        _link(
            "thumb_distal",
            "thumb_proximal",
            (0.0, THUMB_LENGTHS[0], 0.0),
            _revolute(FLEX, 0.0, 1.4),
            collision=[_capsule(THUMB_LENGTHS[1], THUMB_RADIUS)],
            samples=THUMB_SAMPLES[1],
        )
    )
    T1, T2 = THUMB_LENGTHS
    keypoints += [
        {"name": "thumb_cmc", "link": "thumb_proximal", "offset": [0.0, 0.0, 0.0]},
        {"name": "thumb_mid", "link": "thumb_proximal", "offset": [0.0, 0.5 * T1, 0.0]},
        {"name": "thumb_ip", "link": "thumb_distal", "offset": [0.0, 0.0, 0.0]},
        {"name": "thumb_tip", "link": "thumb_distal", "offset": [0.0, T2 + THUMB_RADIUS, 0.0]},
        {"name": "thumb_pad", "link": "thumb_distal", "offset": [0.0, 0.5 * T2, -THUMB_RADIUS]},
    ]
    return {
        "name": "reference-five-finger",
        "links": links,
        "keypoints": keypoints,
        "palm": {"link": "palm", "normal": [0.0, 0.0, -1.0]},
    }


def write_reference_hand(path=None) -> Path:
    path = Path(path) if path else Path(__file__).parent / "data" / "reference_hand.json"
    path.write_text(json.dumps(reference_hand_dict(), indent=2) + "\n")
    return path


if __name__ == "__main__":
    print(write_reference_hand())
