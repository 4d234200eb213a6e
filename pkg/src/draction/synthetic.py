"""Procedural skeleton motion for fixtures, demos and the toy training task.

Rest poses are hand-placed (metres, y up, pelvis at the origin). Actions rotate
one limb chain about its root joint; a small global sway adds whole-body
rotation so orientation-aware skinning has something to do.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .kinematics import mat_to_quat
from .skeleton_io import SkeletonSequence, Topology, save_ntu_skeleton, save_sequence


def _mirror(points):
    return [(-x, y, z) for x, y, z in points]


_ARM_L = [(-0.19, 0.50, 0.0), (-0.23, 0.24, 0.0), (-0.25, 0.00, 0.0), (-0.26, -0.07, 0.0)]
_LEG_L = [(-0.09, -0.03, 0.0), (-0.10, -0.45, 0.0), (-0.11, -0.86, 0.0), (-0.11, -0.90, -0.10)]

TEMPLATES = {
    "kinect_v2_25": np.array(
        [(0.0, 0.0, 0.0), (0.0, 0.28, 0.0), (0.0, 0.58, 0.0), (0.0, 0.74, 0.0)]
        + _ARM_L + _mirror(_ARM_L) + _LEG_L + _mirror(_LEG_L)
        + [(0.0, 0.50, 0.0), (-0.27, -0.14, 0.0), (-0.22, -0.08, -0.03), (0.27, -0.14, 0.0), (0.22, -0.08, -0.03)]
    ),
    "kinect_v1_20": np.array(
        [(0.0, 0.0, 0.0), (0.0, 0.25, 0.0), (0.0, 0.50, 0.0), (0.0, 0.72, 0.0)]
        + _ARM_L + _mirror(_ARM_L) + _LEG_L + _mirror(_LEG_L)
    ),
    "coco_17": np.array([
        (0.0, 0.70, 0.0), (-0.03, 0.73, 0.0), (0.03, 0.73, 0.0), (-0.07, 0.71, 0.0), (0.07, 0.71, 0.0),
        (-0.19, 0.50, 0.0), (0.19, 0.50, 0.0), (-0.23, 0.24, 0.0), (0.23, 0.24, 0.0),
        (-0.25, 0.00, 0.0), (0.25, 0.00, 0.0), (-0.09, -0.03, 0.0), (0.09, -0.03, 0.0),
        (-0.10, -0.45, 0.0), (0.10, -0.45, 0.0), (-0.11, -0.86, 0.0), (0.11, -0.86, 0.0),
    ]),
    "smpl_22": np.array([
        (0.0, 0.0, 0.0), (-0.09, -0.05, 0.0), (0.09, -0.05, 0.0), (0.0, 0.12, 0.0),
        (-0.10, -0.45, 0.0), (0.10, -0.45, 0.0), (0.0, 0.25, 0.0), (-0.11, -0.86, 0.0),
        (0.11, -0.86, 0.0), (0.0, 0.38, 0.0), (-0.11, -0.90, -0.10), (0.11, -0.90, -0.10),
        (0.0, 0.58, 0.0), (-0.08, 0.50, 0.0), (0.08, 0.50, 0.0), (0.0, 0.74, 0.0),
        (-0.19, 0.50, 0.0), (0.19, 0.50, 0.0), (-0.23, 0.24, 0.0), (0.23, 0.24, 0.0),
        (-0.25, 0.00, 0.0), (0.25, 0.00, 0.0),
    ]),
}

# (pivot joint, moving joints) for the right arm and right leg of each template
CHAINS = {
    "kinect_v2_25": {"arm": (8, [9, 10, 11, 23, 24]), "leg": (16, [17, 18, 19])},
    "kinect_v1_20": {"arm": (8, [9, 10, 11]), "leg": (16, [17, 18, 19])},
    "coco_17": {"arm": (6, [8, 10]), "leg": (12, [14, 16])},
    "smpl_22": {"arm": (17, [19, 21]), "leg": (2, [5, 8, 11])},
}

ACTIONS = ("raise_arm", "kick")


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def make_motion(format_tag="kinect_v2_25", action="raise_arm", num_frames=40, seed=0, depth=3.0,
                amplitude=1.0, body_scale=1.0, offset=(0.0, -0.1), sway=0.15, noise=0.0,
                num_persons=1):
    """Generate a short clip of ``action`` for a registered topology.

    Kinect v2 clips carry joint orientations; COCO clips are 2D (z = 0) and
    scaled to half size so they fit the frustum after the depth shift.
    """
    rng = np.random.default_rng(seed)
    topo = Topology.from_tag(format_tag)
    rest = TEMPLATES[format_tag] * body_scale
    pivot, members = CHAINS[format_tag]["arm" if action == "raise_arm" else "leg"]
    phase = rng.uniform(0.0, 0.3)
    T = num_frames
    positions = np.zeros((T, num_persons, topo.num_joints, 3))
    rotations = np.tile(np.eye(3), (T, num_persons, topo.num_joints, 1, 1))
    for p in range(num_persons):
        shift = np.array([offset[0] + 1.0 * p, offset[1], depth + 0.3 * p])
        for t in range(T):
            s = min(max((t / max(T - 1, 1)) * 1.3 - phase, 0.0), 1.0)
            ramp = 0.5 - 0.5 * math.cos(math.pi * s)
            if action == "raise_arm":
                R_local = rot_z(amplitude * ramp * math.radians(150))
            elif action == "kick":
                R_local = rot_x(-amplitude * ramp * math.radians(75))
            else:
                raise ValueError(f"unknown action {action!r}")
            pose = rest.copy()
            pose[members] = (pose[members] - rest[pivot]) @ R_local.T + rest[pivot]
            R_global = rot_y(sway * math.sin(2 * math.pi * t / max(T, 2)))
            pose = pose @ R_global.T + shift
            positions[t, p] = pose
            rotations[t, p] = R_global
            rotations[t, p, members] = R_global @ R_local
    if noise:
        positions += rng.normal(0.0, noise, positions.shape)
    if format_tag == "coco_17":
        centre = positions[..., :2].mean(axis=(0, 1, 2))
        positions[..., :2] = 0.5 * (positions[..., :2] - centre)
        positions[..., 2] = 0.0
    quats = mat_to_quat(rotations) if topo.has_orientations else None
    return SkeletonSequence(positions, topo, quats, fps=30.0)


def make_toy_dataset(n_per_class=10, num_frames=24, seed=0, format_tag="kinect_v2_25"):
    """Two-class set (``raise_arm`` = 0, ``kick`` = 1) with per-sample jitter."""
    rng = np.random.default_rng(seed)
    data = []
    for label, action in enumerate(ACTIONS):
        for _ in range(n_per_class):
            seq = make_motion(
                format_tag, action, num_frames=num_frames, seed=int(rng.integers(1 << 31)),
                depth=rng.uniform(2.7, 3.3), amplitude=rng.uniform(0.7, 1.0),
                body_scale=rng.uniform(0.9, 1.1), offset=(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.0)),
                sway=rng.uniform(0.0, 0.2), noise=0.005,
            )
            data.append((seq, label))
    order = rng.permutation(len(data))
    return [data[i] for i in order]


def custom_topology():
    """A six-joint 'tripod' used to exercise the custom-topology path."""
    edges = [(0, 1), (1, 2), (1, 3), (1, 4), (0, 5)]
    return Topology(num_joints=6, edges=edges, has_orientations=False, format_tag="custom")


def make_custom_motion(num_frames=20, seed=0):
    rng = np.random.default_rng(seed)
    rest = np.array([[0.0, 0.0, 3.0], [0.0, 0.5, 3.0], [-0.4, 0.9, 3.0], [0.4, 0.9, 3.0],
                     [0.0, 1.0, 3.1], [0.0, -0.6, 3.0]])
    positions = np.zeros((num_frames, 1, 6, 3))
    for t in range(num_frames):
        a = 0.4 * math.sin(2 * math.pi * t / num_frames)
        pose = rest.copy()
        pose[2:5] = (pose[2:5] - rest[1]) @ rot_z(a).T + rest[1]
        positions[t, 0] = pose + rng.normal(0, 0.002, pose.shape)
    return SkeletonSequence(positions, custom_topology(), None, fps=30.0)


def write_samples(directory):
    """Write one fixture per supported layout; returns ``{name: path}``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    ntu = make_motion("kinect_v2_25", "raise_arm", num_frames=103, seed=1)
    paths["ntu"] = directory / "S001C001P001R001A001.skeleton"
    save_ntu_skeleton(ntu, paths["ntu"])
    for name, tag, action in (("coco", "coco_17", "kick"), ("ucla", "kinect_v1_20", "raise_arm"),
                              ("smpl", "smpl_22", "kick")):
        paths[name] = directory / f"{name}.json"
        save_sequence(make_motion(tag, action, num_frames=30, seed=2), paths[name])
    paths["custom"] = directory / "custom.json"
    save_sequence(make_custom_motion(), paths["custom"])
    return paths


# --------------------------------------------------------------------------
# gradient-check scene

def gradcheck_sequence(num_frames=3, with_orientations=True, seed=0):
    """Four-joint Y skeleton close to the camera; K = 4 + 3 * 4 = 16 primitives at n_samples=4."""
    rng = np.random.default_rng(seed)
    topo = Topology(num_joints=4, edges=[(0, 1), (1, 2), (1, 3)], has_orientations=with_orientations,
                    format_tag="custom")
    rest = np.array([[0.0, -0.35, 1.5], [0.0, 0.05, 1.45], [-0.3, 0.3, 1.5], [0.32, 0.28, 1.6]])
    positions = np.zeros((num_frames, 1, 4, 3))
    rotations = np.zeros((num_frames, 1, 4, 3, 3))
    for t in range(num_frames):
        positions[t, 0] = rest + rng.normal(0.0, 0.04, rest.shape)
        for j in range(4):
            angles = rng.normal(0.0, 0.4, 3)
            rotations[t, 0, j] = rot_z(angles[0]) @ rot_y(angles[1]) @ rot_x(angles[2])
    quats = mat_to_quat(rotations) if with_orientations else None
    return SkeletonSequence(positions, topo, quats)
