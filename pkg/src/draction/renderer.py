"""Sequence renderer: skinning, modulation and splatting for every sampled frame.

The renderer owns the learnable state: one :class:`CanonicalGaussianSet` per
topology (created lazily from the first rest pose seen) and a single shared
:class:`ModulatorParams`. ``render`` optionally records a :class:`SequenceTape`
that :func:`draction.gradients.backward` replays.
"""
from __future__ import annotations

import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .canonical import ScaleParams, instantiate
from .kinematics import deform, joint_transforms, project_so3, quat_to_mat
from .modulator import (HIDDEN, appearance, blend_color, depth_colormap, depth_range, init_modulator,
                        modulate, nfm_forward, sigmoid)
from .rasterizer import COV2D_EPS, DEFAULT_CUTOFF, Z_CLIP, Camera, composite, project_gaussians


@dataclass
class FrameTape:
    posed: object
    polar: object  # PolarFactors or None in translation-only mode
    proj: object
    nfm_cache: tuple
    mod_cache: tuple
    c_learned: np.ndarray
    c_depth: np.ndarray
    depth_bounds: tuple
    mask: np.ndarray  # (PK,) person present in this frame
    keep: np.ndarray = None  # (PK,) drawn and used for the depth range
    composite: object = None


@dataclass
class SequenceTape:
    topology_key: tuple
    dtype: np.dtype
    persons: np.ndarray  # indices of rendered persons
    mu_c: np.ndarray  # (PK, 3)
    pivot: np.ndarray
    scales: np.ndarray  # (K, 3)
    R_c: np.ndarray  # (K, 3, 3)
    quats: np.ndarray
    features: np.ndarray
    base: np.ndarray  # (K, 4)
    lam: float
    modulator: object  # parameters cast to the render dtype
    camera: object = None
    background: tuple = (0.0, 0.0, 0.0)
    topology_name: str = ""
    weights: np.ndarray = None  # (K, J) skinning weights
    canonical_rotations: np.ndarray = None  # (P, J, 3, 3) or None
    frames: list = field(default_factory=list)


@dataclass
class SequenceRender:
    frames: list  # RenderedFrame per sampled frame
    tape: SequenceTape | None
    timings: dict
    num_primitives: int  # per person


class Renderer:
    """Differentiable skeleton renderer.

    >>> r = Renderer(Camera.from_fov(64))            # doctest: +SKIP
    >>> out = r.render(batch)                         # doctest: +SKIP
    """

    def __init__(self, camera=None, n_samples=10, feature_dim=16, seed=0, scale_params=ScaleParams(),
                 modulator=None, background=(0.0, 0.0, 0.0), cutoff=DEFAULT_CUTOFF, dtype=np.float32,
                 threads=1, eps2d=COV2D_EPS, z_clip=Z_CLIP):
        self.camera = camera if camera is not None else Camera.from_fov(448)
        self.n_samples = n_samples
        self.feature_dim = feature_dim
        self.seed = seed
        self.scale_params = scale_params
        self.modulator = modulator if modulator is not None else init_modulator(feature_dim, seed)
        self.background = tuple(float(c) for c in background)
        self.cutoff = cutoff
        self.dtype = np.dtype(dtype)
        self.threads = threads
        self.eps2d = eps2d
        self.z_clip = z_clip
        self.canonical = {}

    # ------------------------------------------------------------------
    def canonical_for(self, topology, rest_pose):
        key = topology.key
        if key not in self.canonical:
            self.canonical[key] = instantiate(topology, rest_pose, self.n_samples, self.feature_dim,
                                              self.seed, self.scale_params)
        return self.canonical[key]

    def parameters(self):
        """Flat name -> array mapping of every learnable array (views, updated in place)."""
        params = {}
        for canon in self.canonical.values():
            tag = topology_name(canon.topology)
            for name, arr in canon.learnables().items():
                params[f"{tag}/{name}"] = arr
        for name, arr in self.modulator.arrays().items():
            params[f"modulator/{name}"] = arr
        return params

    # ------------------------------------------------------------------
    def render(self, batch, record=False):
        dt = self.dtype
        timings = {}
        tic = time.perf_counter()
        persons = np.flatnonzero(batch.valid.any(axis=0))
        if len(persons) == 0:
            raise ValueError("batch has no valid person")
        canon = self.canonical_for(batch.topology, batch.canonical_joints[persons[0]])
        K = canon.K
        mod = self.modulator.astype(dt)
        W = canon.weights.astype(dt)
        scales = np.exp(canon.log_scales).astype(dt)
        quats = canon.quats.astype(dt)
        R_c = quat_to_mat(quats)
        features = canon.features.astype(dt)
        alpha_c = canon.alpha_c.astype(dt)
        base = appearance(mod, features)
        lam = float(sigmoid(mod.theta_mix))

        P = len(persons)
        canon_joints = batch.canonical_joints[persons].astype(dt)
        mu_c = np.concatenate([canon.interp.astype(dt) @ c for c in canon_joints])
        pivot = np.concatenate([W @ c for c in canon_joints])
        scales_pk = np.tile(scales, (P, 1))
        R_c_pk = np.tile(R_c, (P, 1, 1))
        base_pk = np.tile(base, (P, 1))
        alpha_c_pk = np.tile(alpha_c, P)
        use_rot = batch.rotations is not None and batch.topology.has_orientations
        timings["instantiate"] = time.perf_counter() - tic

        tape = None
        if record:
            crot = batch.canonical_rotations[persons].astype(dt) if use_rot else None
            tape = SequenceTape(batch.topology.key, dt, persons, mu_c, pivot, scales, R_c, quats, features,
                                base, lam, mod, self.camera, self.background, topology_name(batch.topology),
                                W, crot)
        h = np.zeros((P * K, HIDDEN), dtype=dt)
        pending = []
        t_deform = t_mod = 0.0
        for t in range(batch.num_frames):
            tic = time.perf_counter()
            posed, polar, p_k, v_k = _pose_frame(batch, t, persons, W, canon_joints, mu_c, pivot, scales_pk,
                                                 R_c_pk, use_rot, dt)
            t_deform += time.perf_counter() - tic

            tic = time.perf_counter()
            residuals, h, _, nfm_cache = nfm_forward(mod, None, p_k, v_k, h,
                                                     base=base_pk, return_cache=True)
            c_learned, opacity, mod_cache = modulate(base_pk, residuals, alpha_c_pk)
            mask = np.repeat(batch.valid[t, persons], K).astype(dt)
            opacity = opacity * mask
            proj = project_gaussians(posed.mu, posed.sigma, self.camera, self.eps2d, self.z_clip)
            keep = proj.visible & (mask > 0)
            bounds = depth_range(proj.depth[keep])
            c_depth = depth_colormap(proj.depth, *bounds).astype(dt)
            colors = blend_color(c_learned, c_depth, mod.theta_mix).astype(dt)
            t_mod += time.perf_counter() - tic
            pending.append((proj, colors, opacity, keep))
            if record:
                tape.frames.append(FrameTape(posed, polar, proj, nfm_cache, mod_cache, c_learned, c_depth,
                                             bounds, mask, keep))
        timings["deform"] = t_deform
        timings["modulate"] = t_mod

        tic = time.perf_counter()
        cam = self.camera

        def raster(item):
            proj, colors, opacity, keep = item
            return composite(proj.mu2d, proj.cov2d, proj.depth, colors, opacity, cam.width, cam.height,
                             self.background, keep, self.cutoff, record)

        if self.threads > 1 and len(pending) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(raster, pending))
        else:
            results = [raster(item) for item in pending]
        frames = []
        for i, res in enumerate(results):
            if record:
                frame, ctape = res
                tape.frames[i].composite = ctape
            else:
                frame = res
            frames.append(frame)
        timings["rasterize"] = time.perf_counter() - tic
        return SequenceRender(frames, tape, timings, K)

    def pose(self, batch):
        """Posed Gaussians per frame (persons stacked), without appearance or rasterization."""
        dt = self.dtype
        persons = np.flatnonzero(batch.valid.any(axis=0))
        canon = self.canonical_for(batch.topology, batch.canonical_joints[persons[0]])
        W = canon.weights.astype(dt)
        P = len(persons)
        canon_joints = batch.canonical_joints[persons].astype(dt)
        mu_c = np.concatenate([canon.interp.astype(dt) @ c for c in canon_joints])
        pivot = np.concatenate([W @ c for c in canon_joints])
        scales_pk = np.tile(np.exp(canon.log_scales).astype(dt), (P, 1))
        R_c_pk = np.tile(quat_to_mat(canon.quats.astype(dt)), (P, 1, 1))
        use_rot = batch.rotations is not None and batch.topology.has_orientations
        return [_pose_frame(batch, t, persons, W, canon_joints, mu_c, pivot, scales_pk, R_c_pk, use_rot, dt)[0]
                for t in range(batch.num_frames)]


def _pose_frame(batch, t, persons, W, canon_joints, mu_c, pivot, scales_pk, R_c_pk, use_rot, dt):
    """Skin every person of frame ``t``; returns ``(posed, polar, p_k, v_k)``."""
    t_k, R_tilde, p_k, v_k = [], [], [], []
    for i, p in enumerate(persons):
        rot = batch.rotations[t, p] if use_rot else None
        crot = batch.canonical_rotations[p] if use_rot else None
        tr = joint_transforms(batch.joints[t, p].astype(dt), canon_joints[i], rot, crot)
        t_k.append(W @ tr.translations)
        if use_rot:
            R_tilde.append(np.einsum("kj,jab->kab", W, tr.rotations.astype(dt)))
        p_k.append(W @ batch.joints[t, p].astype(dt))
        v_k.append(W @ batch.velocities[t, p].astype(dt))
    polar = None
    if use_rot:
        R_blend, polar = project_so3(np.concatenate(R_tilde), return_factors=True)
    else:
        R_blend = np.broadcast_to(np.eye(3, dtype=dt), (len(mu_c), 3, 3)).copy()
    posed = deform(mu_c, scales_pk, R_c_pk, np.concatenate(t_k), R_blend, pivot)
    return posed, polar, np.concatenate(p_k), np.concatenate(v_k)


def topology_name(topology):
    if topology.format_tag != "custom":
        return topology.format_tag
    digest = zlib.crc32(repr(topology.edges).encode())
    return f"custom_{topology.num_joints}_{digest:08x}"
