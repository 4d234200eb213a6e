"""Reverse-mode gradients of a recorded render and finite-difference checks.

:func:`backward` replays a :class:`~draction.renderer.SequenceTape` from the
last frame to the first, carrying the GRU hidden-state adjoint across frames,
and returns gradients for every learnable array plus the (non-learnable) input
joints and orientations, which the checks use to exercise the skinning and
SO(3)-projection adjoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .kinematics import deform_backward, project_so3_backward, quat_to_mat_backward
from .modulator import (FAMILIES, depth_colormap_backward, depth_range_backward, gru_step_backward,
                        modulate_backward, residual_mlp_backward)
from .rasterizer import composite_backward, project_backward

ABS_FALLBACK = 1e-8


@dataclass
class ParameterGradients:
    d_features: np.ndarray
    d_log_scales: np.ndarray
    d_quat_c: np.ndarray
    d_alpha_c: np.ndarray
    d_modulator: object  # ModulatorParams of gradients
    topology_name: str = ""
    d_joints: np.ndarray | None = None  # (N, P, J, 3) sampled joint positions
    d_velocities: np.ndarray | None = None
    d_rotations: np.ndarray | None = None  # (N, P, J, 3, 3) absolute orientations, None if unused

    @property
    def d_theta_mix(self):
        return float(self.d_modulator.theta_mix)

    def as_dict(self):
        """Keyed like :meth:`Renderer.parameters`."""
        tag = self.topology_name
        out = {f"{tag}/features": self.d_features, f"{tag}/log_scales": self.d_log_scales,
               f"{tag}/quats": self.d_quat_c, f"{tag}/alpha_c": self.d_alpha_c}
        for name, arr in self.d_modulator.arrays().items():
            out[f"modulator/{name}"] = arr
        return out

    def family_arrays(self):
        fam = {"features": [self.d_features], "log_scales": [self.d_log_scales],
               "quats": [self.d_quat_c], "alpha_c": [self.d_alpha_c]}
        for name, members in FAMILIES.items():
            fam[name] = [getattr(self.d_modulator, m) for m in members]
        return fam

    def norms(self):
        """L2 norm per parameter family."""
        return {k: float(math.sqrt(sum(float(np.sum(np.square(a))) for a in v)))
                for k, v in self.family_arrays().items()}

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for v in self.family_arrays().values() for a in v)


def backward(tape, d_images):
    """Adjoint of :meth:`Renderer.render` for upstream image gradients.

    ``d_images`` is ``(N, H, W, 3)`` (or a list of ``(H, W, 3)``), one per
    rendered frame. Gradients are summed over frames and persons.
    """
    if tape is None:
        raise ValueError("render with record=True to obtain a tape")
    N = len(tape.frames)
    d_images = [np.asarray(d) for d in d_images]
    if len(d_images) != N:
        raise ValueError(f"expected {N} image gradients, got {len(d_images)}")
    H, W_img = tape.frames[0].composite.shape if N else (0, 0)
    for d in d_images:
        if d.shape != (H, W_img, 3):
            raise ValueError(f"image gradient must be {(H, W_img, 3)}, got {d.shape}")

    dt = tape.dtype
    mod = tape.modulator
    grads = mod.zeros_like().astype(dt)
    K = len(tape.scales)
    P = len(tape.persons)
    Wlbs = tape.weights
    J = Wlbs.shape[1]
    lam = tape.lam
    cam = tape.camera
    scales_pk = np.tile(tape.scales, (P, 1))
    R_c_pk = np.tile(tape.R_c, (P, 1, 1))

    d_scales = np.zeros((K, 3), dtype=dt)
    d_R_c = np.zeros((K, 3, 3), dtype=dt)
    d_base = np.zeros((K, 4), dtype=dt)
    d_alpha_c = np.zeros(K, dtype=dt)
    d_theta = 0.0
    d_joints = np.zeros((N, P, J, 3), dtype=dt)
    d_vel = np.zeros((N, P, J, 3), dtype=dt)
    use_rot = any(fr.polar is not None for fr in tape.frames)
    d_rot = np.zeros((N, P, J, 3, 3), dtype=dt) if use_rot else None
    dh = np.zeros((P * K, mod.gru_W_hh.shape[1]), dtype=dt)

    for t in reversed(range(N)):
        fr = tape.frames[t]
        d_mu2d, d_cov2d, d_colors, d_opac = composite_backward(fr.composite, d_images[t].astype(dt),
                                                               tape.background)
        d_opac = d_opac * fr.mask

        d_cl = (1 - lam) * d_colors
        d_cd = lam * d_colors
        d_theta += float(np.sum((fr.c_depth - fr.c_learned) * d_colors)) * lam * (1 - lam)

        z_near, z_far = fr.depth_bounds
        d_depth, d_near, d_far = depth_colormap_backward(fr.proj.depth, z_near, z_far, d_cd)
        keep = np.flatnonzero(fr.keep)
        d_depth = d_depth.astype(dt)
        d_depth[keep] += depth_range_backward(fr.proj.depth[keep], d_near, d_far).astype(dt)

        d_mu, d_sigma = project_backward(fr.proj, cam, d_mu2d, d_cov2d, d_depth)
        ds, dRc, dRb, d_t = deform_backward(tape.mu_c, scales_pk, R_c_pk, fr.posed, d_mu, d_sigma, tape.pivot)
        d_scales += ds.reshape(P, K, 3).sum(axis=0)
        d_R_c += dRc.reshape(P, K, 3, 3).sum(axis=0)

        if fr.polar is not None:
            d_R_tilde = project_so3_backward(fr.polar, dRb).reshape(P, K, 3, 3)
            # R~ = sum_j w_kj R_j R_cj^T
            d_rel = np.einsum("kj,pkab->pjab", Wlbs, d_R_tilde)
            d_rot[t] = d_rel @ tape.canonical_rotations

        d_b, d_res, d_ac = modulate_backward(fr.mod_cache, d_cl, d_opac)
        gru_cache, mlp_cache = fr.nfm_cache
        dh = dh + residual_mlp_backward(mod, mlp_cache, d_res, grads)
        dx, dh = gru_step_backward(mod, gru_cache, dh, grads)
        d_b = d_b + dx[:, 6:10]
        d_base += d_b.reshape(P, K, 4).sum(axis=0)
        d_alpha_c += d_ac.reshape(P, K).sum(axis=0)
        # t_k = W (j_t - j_c), p_k = W j_t, v_k = W v_t
        d_joints[t] = np.einsum("kj,pka->pja", Wlbs, (d_t + dx[:, 0:3]).reshape(P, K, 3))
        d_vel[t] = np.einsum("kj,pka->pja", Wlbs, dx[:, 3:6].reshape(P, K, 3))

    grads.app_W += d_base.T @ tape.features
    grads.app_b += d_base.sum(axis=0)
    grads.theta_mix = np.array(d_theta, dtype=dt)
    d_features = d_base @ mod.app_W
    d_quat = quat_to_mat_backward(tape.quats, d_R_c)
    d_log_scales = d_scales * tape.scales

    g64 = grads.astype(np.float64)
    out = ParameterGradients(d_features.astype(np.float64), d_log_scales.astype(np.float64),
                             d_quat.astype(np.float64), d_alpha_c.astype(np.float64), g64,
                             tape.topology_name, d_joints, d_vel, d_rot)
    return out


# --------------------------------------------------------------------------
# finite differences

@dataclass
class GradcheckScene:
    """A renderer, a frame batch and a fixed random pixel mask defining ``loss = sum(mask * images)``."""

    renderer: object
    batch: object
    mask: np.ndarray  # (N, H, W, 3)
    fault: str | None = None  # test hook: "sign_flip" negates analytic gradients

    def loss(self):
        out = self.renderer.render(self.batch)
        return float(sum(np.sum(m * f.rgb) for m, f in zip(self.mask, out.frames)))

    def gradients(self):
        out = self.renderer.render(self.batch, record=True)
        g = backward(out.tape, self.mask)
        if self.fault == "sign_flip":
            for arrs in g.family_arrays().values():
                for a in arrs:
                    a *= -1.0
            for a in (g.d_joints, g.d_rotations):
                if a is not None:
                    a *= -1.0
        return g

    def array(self, name):
        """Learnable (``"{topology}/features"``, ``"modulator/gru_W_hh"``) or input (``"input/joints"``) array."""
        if name == "input/joints":
            return self.batch.joints
        if name == "input/rotations":
            return self.batch.rotations
        return self.renderer.parameters()[name]

    def gradient_of(self, grads, name):
        if name == "input/joints":
            out = np.zeros_like(self.batch.joints, dtype=np.float64)
            out[:, grads_persons(self)] = grads.d_joints
            return out
        if name == "input/rotations":
            out = np.zeros_like(self.batch.rotations, dtype=np.float64)
            out[:, grads_persons(self)] = grads.d_rotations
            return out
        return grads.as_dict()[name]


def grads_persons(scene):
    return np.flatnonzero(scene.batch.valid.any(axis=0))


@dataclass
class FDEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    error: float


@dataclass
class FDReport:
    entries: list = field(default_factory=list)

    @property
    def max_error(self):
        return max((e.error for e in self.entries), default=0.0)


def relative_error(analytic, numeric, floor=ABS_FALLBACK):
    """Relative error, falling back to absolute error when both magnitudes are below ``floor``."""
    if not (math.isfinite(analytic) and math.isfinite(numeric)):
        return math.inf
    scale = max(abs(analytic), abs(numeric))
    diff = abs(analytic - numeric)
    return diff if scale < floor else diff / scale


def finite_diff_report(selector, scene, h=1e-5, mode="central", grads=None):
    """Compare tape gradients against central differences.

    ``selector`` is a list of ``(array_name, flat_indices)`` pairs. Perturbed
    entries are restored exactly after each evaluation.
    """
    if mode != "central":
        raise ValueError("only central differences are supported")
    if scene.renderer.dtype != np.float64:
        raise NumericalError("finite-difference checks require 64-bit rendering")
    if grads is None:
        grads = scene.gradients()
    report = FDReport()
    for name, indices in selector:
        arr = scene.array(name)
        g = scene.gradient_of(grads, name)
        for i in indices:
            i = int(i)
            old = arr.flat[i]
            try:
                arr.flat[i] = old + h
                plus = scene.loss()
                arr.flat[i] = old - h
                minus = scene.loss()
            finally:
                arr.flat[i] = old
            numeric = (plus - minus) / (2 * h)
            analytic = float(np.asarray(g).flat[i])
            report.entries.append(FDEntry(name, i, analytic, numeric, relative_error(analytic, numeric)))
    return report


def finite_diff_check(selector, scene, h=1e-5, mode="central"):
    """Maximum relative error over the selected scalars (``inf`` if any render is non-finite)."""
    return finite_diff_report(selector, scene, h, mode).max_error
