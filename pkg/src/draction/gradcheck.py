"""Seeded finite-difference suite over every parameter family.

The scene is a 32x32 render of a four-joint skeleton (K = 16) over three
frames, evaluated densely (no patch truncation) in float64 so that the image
is a smooth function of every parameter away from depth-order swaps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import ScaleParams
from .gradients import GradcheckScene, finite_diff_report
from .modulator import FAMILIES
from .rasterizer import Camera
from .renderer import Renderer
from .skeleton_io import prepare
from .synthetic import gradcheck_sequence

GRADCHECK_SCALES = ScaleParams(s_base_joint=0.12, s_min_joint=0.05, s_max_joint=0.2,
                               s_base_bone=0.09, s_min_bone=0.04, s_max_bone=0.15, gamma=0.5)

# family -> (tolerance, array-name suffixes); "{topo}" is filled in per scene
TOLERANCES = {
    "features": 1e-4,
    "log_scales": 1e-4,
    "quats": 1e-4,
    "alpha_c": 1e-4,
    "appearance_mlp": 1e-4,
    "gru": 1e-3,
    "residual_mlp": 1e-4,
    "theta_mix": 1e-5,
    "joints": 1e-4,
    "rotations": 1e-4,
}
FAMILY_NAMES = tuple(TOLERANCES)


def build_scene(seed=0, with_orientations=True, size=32, num_frames=3, n_samples=4, cull_joint=None,
                fault=None):
    """Seeded scene with randomised learnables so no gradient is trivially zero."""
    rng = np.random.default_rng(seed)
    seq = gradcheck_sequence(num_frames, with_orientations, seed)
    if cull_joint is not None:
        seq.positions[:, :, cull_joint, 2] = -0.5
    batch = prepare(seq, n=num_frames, mode="deterministic")
    renderer = Renderer(Camera.from_fov(size), n_samples=n_samples, feature_dim=8, seed=seed,
                        scale_params=GRADCHECK_SCALES, background=(0.1, 0.2, 0.3), cutoff=0.0,
                        dtype=np.float64)
    persons = np.flatnonzero(batch.valid.any(axis=0))
    canon = renderer.canonical_for(batch.topology, batch.canonical_joints[persons[0]])
    K = canon.K
    canon.features[...] = rng.normal(0.0, 0.6, canon.features.shape)
    canon.log_scales[...] += rng.normal(0.0, 0.25, canon.log_scales.shape)
    canon.quats[...] = rng.normal(0.0, 1.0, (K, 4))
    canon.quats /= np.linalg.norm(canon.quats, axis=1, keepdims=True)
    canon.alpha_c[...] = rng.normal(0.5, 0.5, K)
    renderer.modulator.theta_mix[...] = 0.3
    mask = rng.normal(size=(num_frames, size, size, 3))
    return GradcheckScene(renderer, batch, mask, fault)


def family_arrays(scene, family):
    tag = next(iter(scene.renderer.canonical.values()))
    from .renderer import topology_name

    topo = topology_name(tag.topology)
    if family in ("features", "log_scales", "quats", "alpha_c"):
        return [f"{topo}/{family}"]
    if family in FAMILIES:
        return [f"modulator/{m}" for m in FAMILIES[family]]
    if family == "joints":
        return ["input/joints"]
    if family == "rotations":
        return ["input/rotations"] if scene.batch.rotations is not None else []
    raise KeyError(f"unknown family {family!r}")


def select(scene, family, per_array=12, seed=0):
    """Seeded subset of flat indices per array of ``family``."""
    rng = np.random.default_rng(seed)
    sel = []
    for name in family_arrays(scene, family):
        arr = scene.array(name)
        n = arr.size
        if name == "input/rotations":
            # frame 0 is the canonical pose; perturb later frames only
            start = n // arr.shape[0]
            idx = rng.choice(np.arange(start, n), size=min(per_array, n - start), replace=False)
        else:
            idx = rng.choice(n, size=min(per_array, n), replace=False)
        sel.append((name, np.sort(idx)))
    return sel


@dataclass
class FamilyResult:
    family: str
    max_error: float
    tolerance: float
    count: int
    worst: object = None

    @property
    def passed(self):
        return self.max_error < self.tolerance


def run_suite(families=None, seed=0, h=1e-5, per_array=12, fault=None):
    """Run every family on the orientation scene and the translation-only scene.

    Returns a list of :class:`FamilyResult`; the translation-only rows are
    suffixed ``[translation-only]``.
    """
    families = list(families or FAMILY_NAMES)
    results = []
    for with_rot in (True, False):
        scene = build_scene(seed, with_orientations=with_rot, fault=fault)
        grads = scene.gradients()
        for fam in families:
            if fam == "rotations" and not with_rot:
                continue
            sel = select(scene, fam, per_array, seed)
            rep = finite_diff_report(sel, scene, h=h, grads=grads)
            worst = max(rep.entries, key=lambda e: e.error, default=None)
            label = fam if with_rot else f"{fam} [translation-only]"
            results.append(FamilyResult(label, rep.max_error, TOLERANCES[fam], len(rep.entries), worst))
    return results


def format_table(results):
    lines = [f"{'family':<32} {'n':>4} {'max err':>10} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.family:<32} {r.count:>4} {r.max_error:>10.2e} {r.tolerance:>8.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
