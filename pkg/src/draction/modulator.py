"""Neural feature modulator: pose-conditioned colour and opacity per primitive.

Per frame and primitive the network sees ``x = [p, v, rgba_base]`` (10 values):
skinning-weighted position and velocity plus the base RGBA decoded from the
primitive's learnable feature. A single GRU cell (hidden 10) carries state
across frames and a 10 -> 64 -> 5 ReLU MLP turns the hidden state into colour
and opacity residuals plus a saliency logit.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

HIDDEN = 10
INPUT = 10
MLP_HIDDEN = 64
MIN_DEPTH_SPAN = 0.1

FAMILIES = {
    "appearance_mlp": ("app_W", "app_b"),
    "gru": ("gru_W_ih", "gru_W_hh", "gru_b_ih", "gru_b_hh"),
    "residual_mlp": ("mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2"),
    "theta_mix": ("theta_mix",),
}


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class ModulatorParams:
    app_W: np.ndarray  # (4, d)
    app_b: np.ndarray  # (4,)
    gru_W_ih: np.ndarray  # (3H, 10), gate order r, z, n
    gru_W_hh: np.ndarray  # (3H, H)
    gru_b_ih: np.ndarray  # (3H,)
    gru_b_hh: np.ndarray  # (3H,)
    mlp_W1: np.ndarray  # (64, H)
    mlp_b1: np.ndarray  # (64,)
    mlp_W2: np.ndarray  # (5, 64)
    mlp_b2: np.ndarray  # (5,)
    theta_mix: np.ndarray  # () scalar logit of the depth-colour mix

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return ModulatorParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self):
        return ModulatorParams(**{k: np.array(v, copy=True) for k, v in self.arrays().items()})

    def astype(self, dtype):
        return ModulatorParams(**{k: np.asarray(v, dtype=dtype) for k, v in self.arrays().items()})

    @property
    def feature_dim(self):
        return self.app_W.shape[1]


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_modulator(feature_dim=16, seed=0, theta_mix=0.0):
    """Fan-in uniform MLPs, orthogonal recurrent blocks, seeded."""
    rng = np.random.default_rng(seed)
    H = HIDDEN
    return ModulatorParams(
        app_W=_uniform(rng, (4, feature_dim), feature_dim),
        app_b=_uniform(rng, (4,), feature_dim),
        gru_W_ih=_uniform(rng, (3 * H, INPUT), H),
        gru_W_hh=np.concatenate([_orthogonal(rng, H) for _ in range(3)]),
        gru_b_ih=_uniform(rng, (3 * H,), H),
        gru_b_hh=_uniform(rng, (3 * H,), H),
        mlp_W1=_uniform(rng, (MLP_HIDDEN, H), H),
        mlp_b1=_uniform(rng, (MLP_HIDDEN,), H),
        mlp_W2=_uniform(rng, (5, MLP_HIDDEN), MLP_HIDDEN),
        mlp_b2=_uniform(rng, (5,), MLP_HIDDEN),
        theta_mix=np.array(float(theta_mix)),
    )


@dataclass
class FrameAppearance:
    colors: np.ndarray  # (K, 3)
    opacities: np.ndarray  # (K,)
    hidden_state: np.ndarray  # (K, H)


# --------------------------------------------------------------------------
# building blocks

def aggregate_kinematics(weights, joints, velocities):
    """Skinning-weighted primitive position and velocity."""
    return weights @ joints, weights @ velocities


def appearance(params, features):
    return features @ params.app_W.T + params.app_b


def gru_step(params, x, h):
    H = h.shape[1]
    gi = x @ params.gru_W_ih.T + params.gru_b_ih
    gh = h @ params.gru_W_hh.T + params.gru_b_hh
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
    n = np.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
    h_new = (1 - z) * n + z * h
    return h_new, (x, h, r, z, n, gh[:, 2 * H:])


def gru_step_backward(params, cache, dh_new, grads):
    """Backprop one GRU step; accumulates weight grads into ``grads`` and returns ``(dx, dh)``."""
    x, h, r, z, n, ghn = cache
    dn = dh_new * (1 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1 - n * n)
    dr = dn_pre * ghn
    dr_pre = dr * r * (1 - r)
    dz_pre = dz * z * (1 - z)
    d_gi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    d_gh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    grads.gru_W_ih += d_gi.T @ x
    grads.gru_b_ih += d_gi.sum(axis=0)
    grads.gru_W_hh += d_gh.T @ h
    grads.gru_b_hh += d_gh.sum(axis=0)
    return d_gi @ params.gru_W_ih, dh + d_gh @ params.gru_W_hh


def residual_mlp(params, h):
    pre = h @ params.mlp_W1.T + params.mlp_b1
    act = np.maximum(pre, 0.0)
    return act @ params.mlp_W2.T + params.mlp_b2, (h, pre, act)


def residual_mlp_backward(params, cache, d_out, grads):
    h, pre, act = cache
    grads.mlp_W2 += d_out.T @ act
    grads.mlp_b2 += d_out.sum(axis=0)
    d_act = d_out @ params.mlp_W2
    d_pre = d_act * (pre > 0)
    grads.mlp_W1 += d_pre.T @ h
    grads.mlp_b1 += d_pre.sum(axis=0)
    return d_pre @ params.mlp_W1


def nfm_forward(params, features, p, v, hidden_in, base=None, return_cache=False):
    """One modulator step. Returns ``(residuals, hidden_out, base)`` (+ cache)."""
    if base is None:
        base = appearance(params, features)
    x = np.concatenate([p, v, base], axis=1)
    hidden_out, gru_cache = gru_step(params, x, hidden_in)
    residuals, mlp_cache = residual_mlp(params, hidden_out)
    if return_cache:
        return residuals, hidden_out, base, (gru_cache, mlp_cache)
    return residuals, hidden_out, base


def modulate(base, residuals, alpha_c=0.0):
    """Modulated colour and opacity.

    The base-opacity logit is the canonical opacity logit plus the alpha
    channel of the appearance head.
    """
    c_learned = sigmoid(base[:, :3] + residuals[:, :3])
    s_alpha = sigmoid(alpha_c + base[:, 3] + residuals[:, 3])
    s_gate = sigmoid(residuals[:, 4])
    return c_learned, s_alpha * s_gate, (c_learned, s_alpha, s_gate)


def modulate_backward(cache, d_color, d_alpha):
    """Returns ``(d_base, d_residuals, d_alpha_c)``; d_base and d_residuals share the RGB/alpha part."""
    c_learned, s_alpha, s_gate = cache
    d_rgb = d_color * c_learned * (1 - c_learned)
    d_alpha_pre = d_alpha * s_gate * s_alpha * (1 - s_alpha)
    d_gate = d_alpha * s_alpha * s_gate * (1 - s_gate)
    d_base = np.concatenate([d_rgb, d_alpha_pre[:, None]], axis=1)
    d_res = np.concatenate([d_rgb, d_alpha_pre[:, None], d_gate[:, None]], axis=1)
    return d_base, d_res, d_alpha_pre


def depth_range(depth, low=5.0, high=95.0, min_span=MIN_DEPTH_SPAN):
    """Percentile depth bounds with a minimum span, centred when widened."""
    depth = np.asarray(depth)
    if depth.size == 0:
        return 0.0, min_span
    z_near, z_far = np.percentile(depth, [low, high])
    if z_far - z_near < min_span:
        mid = 0.5 * (z_near + z_far)
        z_near, z_far = mid - 0.5 * min_span, mid + 0.5 * min_span
    return float(z_near), float(z_far)


def depth_colormap(depth, z_near, z_far):
    """Triangular red -> green -> blue ramp from near to far, (K, 3)."""
    if not z_near < z_far:
        raise ValueError("z_near must be smaller than z_far")
    u = np.clip((np.asarray(depth) - z_near) / (z_far - z_near), 0.0, 1.0)
    centres = np.array([0.0, 0.5, 1.0], dtype=u.dtype)
    return np.clip(1.0 - np.abs(u[:, None] - centres) / 0.5, 0.0, 1.0)


def depth_range_backward(depth, d_near, d_far, low=5.0, high=95.0, min_span=MIN_DEPTH_SPAN):
    """Gradient of :func:`depth_range` with respect to ``depth``.

    Linear-interpolated percentiles are weighted sums of two order statistics,
    so the bounds are piecewise linear in the depths (sort order held fixed).
    """
    depth = np.asarray(depth)
    n = depth.size
    grad = np.zeros(n, dtype=np.float64)
    if n == 0:
        return grad
    z_near, z_far = np.percentile(depth, [low, high])
    if z_far - z_near < min_span:
        d_near = d_far = 0.5 * (d_near + d_far)
    order = np.argsort(depth, kind="stable")
    for q, g in ((low, d_near), (high, d_far)):
        pos = q / 100.0 * (n - 1)
        i = int(np.floor(pos))
        frac = pos - i
        j = min(i + 1, n - 1)
        grad[order[i]] += (1.0 - frac) * g
        grad[order[j]] += frac * g
    return grad


def depth_colormap_backward(depth, z_near, z_far, d_color):
    """Returns ``(d_depth, d_near, d_far)``; zero outside the ramp and at clipped ends."""
    span = z_far - z_near
    raw = (np.asarray(depth) - z_near) / span
    inside = (raw > 0.0) & (raw < 1.0)
    u = np.clip(raw, 0.0, 1.0)
    centres = np.array([0.0, 0.5, 1.0])
    diff = u[:, None] - centres
    active = np.abs(diff) < 0.5
    slope = np.where(active, -np.sign(diff) / 0.5, 0.0)
    d_u = np.where(inside, (slope * d_color).sum(axis=1), 0.0)
    d_near = float(np.sum(d_u * (u - 1.0))) / span
    d_far = float(np.sum(d_u * -u)) / span
    return d_u / span, d_near, d_far


def blend_color(c_learned, c_depth, theta_mix):
    lam = sigmoid(np.asarray(theta_mix))
    return (1 - lam) * c_learned + lam * c_depth
