"""Canonical Gaussian primitives bound to a skeleton topology.

One primitive sits on every joint and ``n_samples`` primitives are spread
along every bone, so ``K = J + |E| * n_samples`` for any topology.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import softmax

JOINT_LOGIT = 10.0
BACKGROUND_LOGIT = -10.0


@dataclass(frozen=True)
class ScaleParams:
    s_base_joint: float = 0.04
    s_min_joint: float = 0.01
    s_max_joint: float = 0.08
    s_base_bone: float = 0.025
    s_min_bone: float = 0.008
    s_max_bone: float = 0.06
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("joint", "bone"):
            lo = getattr(self, f"s_min_{name}")
            hi = getattr(self, f"s_max_{name}")
            base = getattr(self, f"s_base_{name}")
            if min(lo, hi, base) <= 0:
                raise ValueError(f"{name} scale bounds must be positive")
            if lo > hi:
                raise ValueError(f"s_min_{name} > s_max_{name}")


def primitive_count(num_joints, num_edges, n_samples):
    return num_joints + num_edges * n_samples


def make_bindings(topology, n_samples):
    """``("joint", j)`` for the first J primitives, then ``("bone", a, b, alpha)`` per sample."""
    bindings = [("joint", j) for j in range(topology.num_joints)]
    for a, b in topology.edges:
        for i in range(1, n_samples + 1):
            bindings.append(("bone", a, b, i / (n_samples + 1)))
    return bindings


def interpolation_matrix(bindings, num_joints):
    """K x J matrix mapping joint positions to canonical primitive centres."""
    B = np.zeros((len(bindings), num_joints))
    for k, b in enumerate(bindings):
        if b[0] == "joint":
            B[k, b[1]] = 1.0
        else:
            _, a, c, alpha = b
            B[k, a] += 1.0 - alpha
            B[k, c] += alpha
    return B


def lbs_weight_logits(bindings, num_joints):
    """Fixed skinning logits: +10 on the bound joint, log-ratio + 10 on bone ends, -10 elsewhere."""
    logits = np.full((len(bindings), num_joints), BACKGROUND_LOGIT)
    for k, b in enumerate(bindings):
        if b[0] == "joint":
            logits[k, b[1]] = JOINT_LOGIT
        else:
            _, a, c, alpha = b
            logits[k, a] = np.log(1.0 - alpha) + JOINT_LOGIT
            logits[k, c] = np.log(alpha) + JOINT_LOGIT
    return logits


def bone_lengths(topology, joints):
    joints = np.asarray(joints, dtype=np.float64)
    a = np.array([e[0] for e in topology.edges])
    b = np.array([e[1] for e in topology.edges])
    return np.linalg.norm(joints[a] - joints[b], axis=-1)


def adaptive_scales(topology, canonical_joints, params=ScaleParams(), n_samples=10):
    """Isotropic scales from local bone length, returned as a (K, 3) array in metres.

    Joint primitives use the median length of their incident bones, bone
    primitives the length of their own bone; both are normalised by the
    longest bone, raised to ``gamma`` and clipped.
    """
    lengths = bone_lengths(topology, canonical_joints)
    L_max = float(lengths.max())
    J = topology.num_joints
    K = primitive_count(J, topology.num_edges, n_samples)
    if L_max == 0.0:
        warnings.warn("all joints coincide; falling back to minimum scales", stacklevel=2)
        s = np.concatenate([np.full(J, params.s_min_joint),
                            np.full(K - J, params.s_min_bone)])
        return np.repeat(s[:, None], 3, axis=1)
    if np.any(lengths == 0.0):
        warnings.warn("zero-length bone; its primitives get the minimum bone scale", stacklevel=2)

    incident = [[] for _ in range(J)]
    for e, (a, b) in enumerate(topology.edges):
        incident[a].append(lengths[e])
        incident[b].append(lengths[e])
    joint_len = np.array([np.median(x) if x else 0.0 for x in incident])
    s_joint = np.clip(params.s_base_joint * (joint_len / L_max) ** params.gamma,
                      params.s_min_joint, params.s_max_joint)
    s_bone = np.clip(params.s_base_bone * (lengths / L_max) ** params.gamma,
                     params.s_min_bone, params.s_max_bone)
    s = np.concatenate([s_joint, np.repeat(s_bone, n_samples)])
    return np.repeat(s[:, None], 3, axis=1)


@dataclass
class CanonicalGaussianSet:
    """Pose-independent primitives for one topology.

    ``mu_c``, ``interp`` and ``weight_logits`` are fixed geometry; ``features``,
    ``log_scales``, ``quats`` and ``alpha_c`` are the learnable arrays.
    """

    topology: object
    n_samples: int
    bindings: list
    interp: np.ndarray
    weight_logits: np.ndarray
    mu_c: np.ndarray
    log_scales: np.ndarray
    quats: np.ndarray
    alpha_c: np.ndarray
    features: np.ndarray
    scale_params: ScaleParams = field(default_factory=ScaleParams)

    @property
    def K(self):
        return len(self.bindings)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def weights(self):
        return softmax(self.weight_logits)

    def centres(self, canonical_joints):
        """Canonical centres for another rest pose of the same topology."""
        return self.interp @ np.asarray(canonical_joints)

    def with_canonical_joints(self, canonical_joints):
        """Rebind to a new rest pose; the learnable arrays are shared, not copied."""
        return replace(self, mu_c=self.centres(canonical_joints))

    def learnables(self):
        return {"features": self.features, "log_scales": self.log_scales,
                "quats": self.quats, "alpha_c": self.alpha_c}


def instantiate(topology, canonical_joints, n_samples=10, feature_dim=16, seed=0,
                scale_params=ScaleParams()):
    """Build the canonical primitive set for ``topology`` from one rest pose (J, 3)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    canonical_joints = np.asarray(canonical_joints, dtype=np.float64)
    if canonical_joints.shape != (topology.num_joints, 3):
        raise ValueError(f"canonical joints must be ({topology.num_joints}, 3)")
    if not np.all(np.isfinite(canonical_joints)):
        raise ValueError("canonical joints must be finite")
    bindings = make_bindings(topology, n_samples)
    K = len(bindings)
    interp = interpolation_matrix(bindings, topology.num_joints)
    rng = np.random.default_rng(seed)
    quats = np.zeros((K, 4))
    quats[:, 0] = 1.0
    scales = adaptive_scales(topology, canonical_joints, scale_params, n_samples)
    return CanonicalGaussianSet(
        topology=topology,
        n_samples=n_samples,
        bindings=bindings,
        interp=interp,
        weight_logits=lbs_weight_logits(bindings, topology.num_joints),
        mu_c=interp @ canonical_joints,
        log_scales=np.log(scales),
        quats=quats,
        alpha_c=np.zeros(K),
        features=rng.normal(0.0, 0.01, size=(K, feature_dim)),
        scale_params=scale_params,
    )
