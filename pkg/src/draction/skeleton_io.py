"""Skeleton containers, format registry, loaders and frame sampling.

Two on-disk layouts are supported:

* the native ``draction/1`` JSON container (any registered or custom topology)
* the NTU RGB+D ``.skeleton`` text layout (Kinect v2, 25 joints, orientations)

Coordinates are metres in the camera frame, y up, z pointing away from the
camera. 2D inputs (COCO keypoints) are lifted onto the z=0 plane.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError, SkeletonFormatError
from .kinematics import quat_to_mat

NATIVE_VERSION = "draction/1"

FORMAT_TAGS = ("kinect_v2_25", "kinect_v1_20", "coco_17", "smpl_22", "custom")

# Kinect v2 / NTU RGB+D joint order, ST-GCN edge set.
KINECT_V2_EDGES = [
    (0, 1), (1, 20), (20, 2), (2, 3),
    (20, 4), (4, 5), (5, 6), (6, 7), (7, 21), (7, 22),
    (20, 8), (8, 9), (9, 10), (10, 11), (11, 23), (11, 24),
    (0, 12), (12, 13), (13, 14), (14, 15),
    (0, 16), (16, 17), (17, 18), (18, 19),
]

# Kinect v1 / NW-UCLA
KINECT_V1_EDGES = [
    (0, 1), (1, 2), (2, 3),
    (2, 4), (4, 5), (5, 6), (6, 7),
    (2, 8), (8, 9), (9, 10), (10, 11),
    (0, 12), (12, 13), (13, 14), (14, 15),
    (0, 16), (16, 17), (17, 18), (18, 19),
]

# COCO keypoints as a spanning tree rooted at the nose (no torso loop).
COCO_EDGES = [
    (0, 1), (0, 2), (1, 3), (2, 4),
    (0, 5), (0, 6),
    (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
]

SMPL_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
SMPL_EDGES = [(p, c) for c, p in enumerate(SMPL_PARENTS) if p >= 0]

REGISTRY = {
    "kinect_v2_25": dict(num_joints=25, edges=KINECT_V2_EDGES, has_orientations=True),
    "kinect_v1_20": dict(num_joints=20, edges=KINECT_V1_EDGES, has_orientations=False),
    "coco_17": dict(num_joints=17, edges=COCO_EDGES, has_orientations=False),
    "smpl_22": dict(num_joints=22, edges=SMPL_EDGES, has_orientations=False),
}


@dataclass(frozen=True)
class Topology:
    num_joints: int
    edges: tuple
    has_orientations: bool = False
    format_tag: str = "custom"

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.format_tag not in FORMAT_TAGS:
            raise SchemaError(f"unknown format tag {self.format_tag!r}")
        if self.num_joints < 2:
            raise SchemaError(f"need at least 2 joints, got {self.num_joints}")
        if not edges:
            raise SchemaError("topology has no edges")
        seen = set()
        for a, b in edges:
            if not (0 <= a < self.num_joints and 0 <= b < self.num_joints):
                raise SchemaError(f"edge ({a}, {b}) out of range for J={self.num_joints}")
            if a == b:
                raise SchemaError(f"self-loop at joint {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise SchemaError(f"duplicate edge ({a}, {b})")
            seen.add(key)

    @classmethod
    def from_tag(cls, format_tag):
        if format_tag not in REGISTRY:
            raise SchemaError(f"{format_tag!r} is not a registered topology")
        return cls(format_tag=format_tag, **REGISTRY[format_tag])

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def key(self):
        """Hashable identity used to share learnable parameters between sequences."""
        return (self.format_tag, self.num_joints, self.edges)

    @classmethod
    def from_dict(cls, d):
        return cls(num_joints=int(d["num_joints"]), edges=d["edges"],
                   has_orientations=bool(d.get("has_orientations", False)),
                   format_tag=d.get("format_tag", "custom"))

    def to_dict(self):
        return {
            "format_tag": self.format_tag,
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "has_orientations": self.has_orientations,
        }


@dataclass
class SkeletonSequence:
    """Raw sequence: ``positions`` is (T, P, J, 3), ``orientations`` (T, P, J, 4) as (w, x, y, z)."""

    positions: np.ndarray
    topology: Topology
    orientations: np.ndarray | None = None
    fps: float | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        pos = self.positions
        if pos.ndim != 4 or pos.shape[-1] != 3:
            raise SchemaError(f"positions must be (T, P, J, 3), got {pos.shape}")
        T, P, J, _ = pos.shape
        if T < 1 or P < 1:
            raise SchemaError("sequence needs at least one frame and one person")
        if J != self.topology.num_joints:
            raise SchemaError(f"positions have {J} joints, topology expects {self.topology.num_joints}")
        bad = np.argwhere(~np.isfinite(pos))
        if len(bad):
            t, p, j, _ = bad[0]
            raise DataError(f"non-finite coordinate at frame {t}, person {p}, joint {j}")
        if self.orientations is not None:
            self.orientations = np.asarray(self.orientations, dtype=np.float64)
            q = self.orientations
            if q.shape != (T, P, J, 4):
                raise SchemaError(f"orientations must be {(T, P, J, 4)}, got {q.shape}")
            if not np.all(np.isfinite(q)):
                t, p, j, _ = np.argwhere(~np.isfinite(q))[0]
                raise DataError(f"non-finite quaternion at frame {t}, person {p}, joint {j}")
            norm_err = np.abs(np.linalg.norm(q, axis=-1) - 1.0)
            if np.any(norm_err > 1e-6):
                t, p, j = np.argwhere(norm_err > 1e-6)[0]
                raise DataError(f"quaternion at frame {t}, person {p}, joint {j} is not unit length")

    @property
    def num_frames(self):
        return self.positions.shape[0]

    @property
    def num_persons(self):
        return self.positions.shape[1]


@dataclass
class FrameBatch:
    joints: np.ndarray  # (N, P, J, 3)
    velocities: np.ndarray  # (N, P, J, 3)
    canonical_joints: np.ndarray  # (P, J, 3)
    topology: Topology
    valid: np.ndarray  # (N, P) bool, False where a person is absent
    frame_indices: np.ndarray
    rotations: np.ndarray | None = None  # (N, P, J, 3, 3) absolute joint orientations
    canonical_rotations: np.ndarray | None = None  # (P, J, 3, 3)
    depth_shift: float = 0.0
    padded: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return self.joints.shape[0]

    @property
    def num_persons(self):
        return self.joints.shape[1]


# --------------------------------------------------------------------------
# native JSON container

def _topology_from_header(header, format_tag, path):
    tag = header.get("format_tag")
    if format_tag is not None and tag is not None and tag != format_tag:
        raise SchemaError(f"{path}: file declares {tag!r}, caller expected {format_tag!r}")
    tag = format_tag or tag
    if tag is None:
        raise SchemaError(f"{path}: no format_tag in header")
    num_joints = header.get("num_joints")
    if tag == "custom":
        if "edges" not in header or num_joints is None:
            raise SchemaError(f"{path}: custom topology needs num_joints and edges")
        return Topology(num_joints=int(num_joints), edges=header["edges"],
                        has_orientations=bool(header.get("has_orientations", False)),
                        format_tag="custom")
    topo = Topology.from_tag(tag)
    if num_joints is not None and int(num_joints) != topo.num_joints:
        raise SchemaError(f"{path}: header has J={num_joints}, {tag} requires J={topo.num_joints}")
    if "edges" in header:
        declared = {(min(a, b), max(a, b)) for a, b in header["edges"]}
        expected = {(min(a, b), max(a, b)) for a, b in topo.edges}
        if declared != expected:
            raise SchemaError(f"{path}: edge list does not match the {tag} registry")
    has_q = bool(header.get("has_orientations", False))
    return replace(topo, has_orientations=has_q)


def _load_native(path, format_tag):
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SkeletonFormatError("invalid UTF-8", offset=exc.start, path=path) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise SkeletonFormatError(exc.msg, offset=offset, path=path) from None
    if not isinstance(doc, dict) or doc.get("format") != NATIVE_VERSION:
        raise SchemaError(f"{path}: not a {NATIVE_VERSION} container")
    topo = _topology_from_header(doc, format_tag, path)
    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        raise SchemaError(f"{path}: 'frames' must be a non-empty list")

    J = topo.num_joints
    dims = int(doc.get("dims", 3))
    if dims not in (2, 3):
        raise SchemaError(f"{path}: dims must be 2 or 3")
    positions, orientations = [], []
    for t, frame in enumerate(frames):
        try:
            pos = np.asarray(frame["positions"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: frame {t}: bad positions ({exc})") from None
        if pos.ndim == 2:
            pos = pos[None]
        if pos.ndim != 3 or pos.shape[1] != J or pos.shape[2] != dims:
            raise SchemaError(f"{path}: frame {t}: expected (P, {J}, {dims}) positions, got {pos.shape}")
        if dims == 2:
            pos = np.concatenate([pos, np.zeros(pos.shape[:-1] + (1,))], axis=-1)
        positions.append(pos)
        if topo.has_orientations:
            if "orientations" not in frame:
                raise SchemaError(f"{path}: frame {t}: orientations missing")
            q = np.asarray(frame["orientations"], dtype=np.float64)
            if q.ndim == 2:
                q = q[None]
            orientations.append(q)
    if len({p.shape for p in positions}) != 1:
        raise SchemaError(f"{path}: person count varies between frames")
    positions = np.stack(positions)
    quats = np.stack(orientations) if topo.has_orientations else None
    if quats is not None and quats.shape[:-1] != positions.shape[:-1]:
        raise SchemaError(f"{path}: orientation array shape {quats.shape} does not match positions")
    fps = doc.get("fps")
    return SkeletonSequence(positions, topo, quats, None if fps is None else float(fps))


def save_sequence(seq, path):
    """Write ``seq`` as a ``draction/1`` container. Float repr keeps the round trip exact."""
    doc = {"format": NATIVE_VERSION, **seq.topology.to_dict(), "fps": seq.fps,
           "num_persons": seq.num_persons, "num_frames": seq.num_frames, "dims": 3}
    frames = []
    for t in range(seq.num_frames):
        frame = {"positions": seq.positions[t].tolist()}
        if seq.orientations is not None:
            frame["orientations"] = seq.orientations[t].tolist()
        frames.append(frame)
    doc["frames"] = frames
    Path(path).write_text(json.dumps(doc))


# --------------------------------------------------------------------------
# NTU RGB+D .skeleton adapter

def _ntu_lines(raw):
    offset = 0
    for line in raw.splitlines(keepends=True):
        yield offset, line.decode("ascii", errors="replace").strip()
        offset += len(line)


def _load_ntu(path, format_tag):
    if format_tag not in (None, "kinect_v2_25"):
        raise SchemaError(f"{path}: .skeleton files are Kinect v2 (kinect_v2_25), not {format_tag!r}")
    raw = Path(path).read_bytes()
    lines = list(_ntu_lines(raw))
    cursor = 0

    def take(kind):
        nonlocal cursor
        if cursor >= len(lines):
            raise SkeletonFormatError(f"unexpected end of file while reading {kind}", offset=len(raw), path=path)
        off, text = lines[cursor]
        cursor += 1
        return off, text

    def as_numbers(off, text, count, kind):
        parts = text.split()
        try:
            values = [float(x) for x in parts]
        except ValueError:
            raise SkeletonFormatError(f"non-numeric {kind}: {text[:40]!r}", offset=off, path=path) from None
        if count is not None and len(values) < count:
            raise SkeletonFormatError(f"{kind} needs {count} values, found {len(values)}", offset=off, path=path)
        return values

    def as_int(off, text, kind):
        try:
            return int(text)
        except ValueError:
            raise SkeletonFormatError(f"expected integer {kind}, found {text[:40]!r}", offset=off, path=path) from None

    n_frames = as_int(*take("frame count"), "frame count")
    frames = []
    for t in range(n_frames):
        n_bodies = as_int(*take("body count"), "body count")
        bodies = []
        for _ in range(n_bodies):
            take("body info")
            off, text = take("joint count")
            n_joints = as_int(off, text, "joint count")
            if n_joints != 25:
                raise SchemaError(f"{path}: frame {t} has {n_joints} joints, kinect_v2_25 requires 25")
            joints = np.zeros((25, 3))
            quats = np.zeros((25, 4))
            for j in range(25):
                off, text = take("joint record")
                vals = as_numbers(off, text, 11, "joint record")
                joints[j] = vals[0:3]
                quats[j] = vals[7:11]
            bodies.append((joints, quats))
        frames.append(bodies)
    P = max((len(b) for b in frames), default=0)
    if n_frames < 1 or P < 1:
        raise SchemaError(f"{path}: no bodies found")
    positions = np.zeros((n_frames, P, 25, 3))
    orientations = np.zeros((n_frames, P, 25, 4))
    orientations[..., 0] = 1.0
    for t, bodies in enumerate(frames):
        for p, (joints, quats) in enumerate(bodies):
            positions[t, p] = joints
            orientations[t, p] = quats
    # Kinect writes untracked orientations as zeros and rounds the rest to ~7 digits.
    norms = np.linalg.norm(orientations, axis=-1, keepdims=True)
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    orientations = np.where(norms < 1e-3, identity, orientations / np.where(norms < 1e-3, 1.0, norms))
    topo = replace(Topology.from_tag("kinect_v2_25"), has_orientations=True)
    return SkeletonSequence(positions, topo, orientations, fps=30.0)


def save_ntu_skeleton(seq, path):
    """Write a Kinect v2 sequence in the NTU ``.skeleton`` text layout."""
    if seq.topology.num_joints != 25:
        raise SchemaError("NTU layout requires 25 joints")
    quats = seq.orientations
    if quats is None:
        quats = np.zeros(seq.positions.shape[:-1] + (4,))
        quats[..., 0] = 1.0
    out = [str(seq.num_frames)]
    for t in range(seq.num_frames):
        out.append(str(seq.num_persons))
        for p in range(seq.num_persons):
            out.append(f"{72057594037900000 + p} 0 1 1 1 1 0 0 0 2")
            out.append("25")
            for j in range(25):
                x, y, z = (repr(float(v)) for v in seq.positions[t, p, j])
                w, qx, qy, qz = (repr(float(v)) for v in quats[t, p, j])
                out.append(f"{x} {y} {z} 0 0 0 0 {w} {qx} {qy} {qz} 2")
    Path(path).write_text("\n".join(out) + "\n")


def load_sequence(path, format_tag=None):
    """Load and validate a skeleton file.

    ``.skeleton`` files go through the NTU adapter, everything else is read as a
    native JSON container. ``format_tag`` (optional) must agree with the file.
    """
    path = Path(path)
    if format_tag is not None and format_tag not in FORMAT_TAGS:
        raise SchemaError(f"unknown format tag {format_tag!r}")
    if path.suffix == ".skeleton":
        return _load_ntu(path, format_tag)
    return _load_native(path, format_tag)


# --------------------------------------------------------------------------
# sampling and depth normalization

def segment_indices(num_frames, n, mode="deterministic", rng=None):
    """Uniform segment sampling. Returns (indices, padded)."""
    if n < 1 or num_frames < 1:
        raise ValueError("need n >= 1 and at least one frame")
    if n > num_frames:
        idx = list(range(num_frames)) + [num_frames - 1] * (n - num_frames)
        return np.asarray(idx, dtype=np.int64), True
    if mode == "deterministic":
        idx = [math.floor((k + 0.5) * num_frames / n) for k in range(n)]
    elif mode == "stochastic":
        if rng is None:
            rng = np.random.default_rng()
        idx = []
        for k in range(n):
            lo = math.floor(k * num_frames / n)
            hi = math.floor((k + 1) * num_frames / n)
            idx.append(int(rng.integers(lo, max(hi, lo + 1))))
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return np.asarray(idx, dtype=np.int64), False


def sample_frames(seq, n=12, mode="deterministic", seed=None):
    """Pick ``n`` frames by uniform segmentation and derive velocities and the canonical pose."""
    rng = np.random.default_rng(seed) if mode == "stochastic" else None
    idx, padded = segment_indices(seq.num_frames, n, mode, rng)
    if padded:
        warnings.warn(f"sequence has {seq.num_frames} frames, padding to {n} by repeating the last frame",
                      stacklevel=2)
    joints = seq.positions[idx]
    valid = np.any(joints != 0.0, axis=(2, 3))

    velocities = np.zeros_like(joints)
    both = valid[1:] & valid[:-1]
    velocities[1:] = np.where(both[..., None, None], joints[1:] - joints[:-1], 0.0)

    rotations = None
    if seq.orientations is not None and seq.topology.has_orientations:
        rotations = quat_to_mat(seq.orientations[idx])

    P = seq.num_persons
    canonical = np.zeros((P,) + joints.shape[2:])
    canonical_rot = None if rotations is None else np.tile(np.eye(3), (P, seq.topology.num_joints, 1, 1))
    for p in range(P):
        hits = np.flatnonzero(valid[:, p])
        if len(hits):
            canonical[p] = joints[hits[0], p]
            if rotations is not None:
                canonical_rot[p] = rotations[hits[0], p]
    return FrameBatch(joints=joints, velocities=velocities, canonical_joints=canonical,
                      topology=seq.topology, valid=valid, frame_indices=idx,
                      rotations=rotations, canonical_rotations=canonical_rot, padded=padded,
                      meta={"fps": seq.fps, "num_source_frames": seq.num_frames})


def normalize_depth(batch, tau=0.5, delta_z=1.0):
    """Shift the whole batch along +z by ``delta_z`` when the median joint depth is within ``tau`` of 0."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = batch.joints[..., 2][batch.valid]
    if z.size == 0:
        return batch
    median = float(np.median(z))
    if abs(median) >= tau:
        return batch
    shift = np.array([0.0, 0.0, delta_z])
    mask = batch.valid[..., None, None]
    joints = np.where(mask, batch.joints + shift, batch.joints)
    has_canon = np.any(batch.valid, axis=0)[:, None, None]
    canonical = np.where(has_canon, batch.canonical_joints + shift, batch.canonical_joints)
    return replace(batch, joints=joints, canonical_joints=canonical,
                   depth_shift=batch.depth_shift + delta_z)


def prepare(seq, n=12, mode="deterministic", seed=None, tau=0.5, delta_z=1.0):
    """``sample_frames`` followed by ``normalize_depth``."""
    return normalize_depth(sample_frames(seq, n, mode, seed), tau, delta_z)
