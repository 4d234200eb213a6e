"""Pinhole projection and front-to-back Gaussian splatting on the CPU.

Pixel ``(row i, col j)`` is sampled at ``(x, y) = (j + 0.5, i + 0.5)`` so the
principal point ``(W/2, H/2)`` sits on the pixel-grid centre. Image ``v`` grows
downward, hence the sign flip on the camera ``Y`` axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Z_CLIP = 0.01
COV2D_EPS = 0.3
DEFAULT_CUTOFF = 1e-5


def intrinsics_from_fov(width, height, fov_x, fov_y):
    """3x3 intrinsics from image size and field of view (radians)."""
    for fov in (fov_x, fov_y):
        if not 0.0 < fov < math.pi:
            raise ValueError(f"field of view must lie in (0, pi), got {fov}")
    fx = width / (2.0 * math.tan(fov_x / 2.0))
    fy = height / (2.0 * math.tan(fov_y / 2.0))
    return np.array([[fx, 0.0, width / 2.0],
                     [0.0, fy, height / 2.0],
                     [0.0, 0.0, 1.0]])


@dataclass
class Camera:
    width: int
    height: int
    fov_x: float
    fov_y: float
    extrinsics: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.intrinsics = intrinsics_from_fov(self.width, self.height, self.fov_x, self.fov_y)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64)

    @classmethod
    def from_fov(cls, width, height=None, fov_x_deg=60.0, fov_y_deg=None, extrinsics=None):
        height = width if height is None else height
        fov_y_deg = fov_x_deg if fov_y_deg is None else fov_y_deg
        kw = {} if extrinsics is None else {"extrinsics": extrinsics}
        return cls(width, height, math.radians(fov_x_deg), math.radians(fov_y_deg), **kw)

    @property
    def fx(self):
        return self.intrinsics[0, 0]

    @property
    def fy(self):
        return self.intrinsics[1, 1]

    @property
    def cx(self):
        return self.intrinsics[0, 2]

    @property
    def cy(self):
        return self.intrinsics[1, 2]

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "fov_x_deg": math.degrees(self.fov_x), "fov_y_deg": math.degrees(self.fov_y),
                "intrinsics": self.intrinsics.tolist(), "extrinsics": self.extrinsics.tolist()}


# --------------------------------------------------------------------------
# projection

@dataclass
class Projection:
    mu2d: np.ndarray  # (K, 2) pixels
    cov2d: np.ndarray  # (K, 2, 2), regularized
    depth: np.ndarray  # (K,) camera-frame Z
    visible: np.ndarray  # (K,) bool, False when culled by the near plane
    mu_cam: np.ndarray
    sigma_cam: np.ndarray
    jac: np.ndarray  # (K, 2, 3)


def project_gaussians(mu, sigma, camera, eps=COV2D_EPS, z_clip=Z_CLIP):
    """Project world-space Gaussians: ``u = fx X/Z + cx``, ``v = -fy Y/Z + cy``, ``cov = J S J^T + eps I``."""
    dtype = mu.dtype
    Rw = camera.extrinsics[:3, :3].astype(dtype)
    tw = camera.extrinsics[:3, 3].astype(dtype)
    mu_cam = mu @ Rw.T + tw
    sigma_cam = Rw @ sigma @ Rw.T
    X, Y, Z = mu_cam[:, 0], mu_cam[:, 1], mu_cam[:, 2]
    visible = Z > z_clip
    Zs = np.where(visible, Z, 1.0)
    fx, fy = dtype.type(camera.fx), dtype.type(camera.fy)
    mu2d = np.stack([fx * X / Zs + dtype.type(camera.cx), -fy * Y / Zs + dtype.type(camera.cy)], axis=1)
    jac = np.zeros((len(mu), 2, 3), dtype=dtype)
    jac[:, 0, 0] = fx / Zs
    jac[:, 0, 2] = -fx * X / (Zs * Zs)
    jac[:, 1, 1] = -fy / Zs
    jac[:, 1, 2] = fy * Y / (Zs * Zs)
    cov2d = jac @ sigma_cam @ np.swapaxes(jac, -1, -2)
    cov2d[:, 0, 0] += eps
    cov2d[:, 1, 1] += eps
    return Projection(mu2d, cov2d, Z.copy(), visible, mu_cam, sigma_cam, jac)


def project_gaussian(mu, sigma, camera, eps=COV2D_EPS, z_clip=Z_CLIP):
    """Single-primitive convenience wrapper; returns ``None`` when culled."""
    mu = np.asarray(mu, dtype=np.float64)[None]
    sigma = np.asarray(sigma, dtype=np.float64)[None]
    proj = project_gaussians(mu, sigma, camera, eps, z_clip)
    if not proj.visible[0]:
        return None
    return proj.mu2d[0], proj.cov2d[0], float(proj.depth[0])


def project_backward(proj, camera, d_mu2d, d_cov2d, d_depth=None):
    """VJP of :func:`project_gaussians` back to world-space ``(d_mu, d_sigma)``."""
    J = proj.jac
    S = proj.sigma_cam
    X, Y, Z = proj.mu_cam[:, 0], proj.mu_cam[:, 1], proj.mu_cam[:, 2]
    vis = proj.visible
    Zs = np.where(vis, Z, 1.0)
    fx, fy = camera.fx, camera.fy
    d_mu2d = np.where(vis[:, None], d_mu2d, 0.0)
    d_cov2d = np.where(vis[:, None, None], d_cov2d, 0.0)

    d_sigma_cam = np.swapaxes(J, -1, -2) @ d_cov2d @ J
    dJ = d_cov2d @ J @ np.swapaxes(S, -1, -2) + np.swapaxes(d_cov2d, -1, -2) @ J @ S

    du, dv = d_mu2d[:, 0], d_mu2d[:, 1]
    Z2 = Zs * Zs
    Z3 = Z2 * Zs
    dX = du * fx / Zs + dJ[:, 0, 2] * (-fx / Z2)
    dY = dv * (-fy / Zs) + dJ[:, 1, 2] * (fy / Z2)
    dZ = (du * (-fx * X / Z2) + dv * (fy * Y / Z2)
          + dJ[:, 0, 0] * (-fx / Z2) + dJ[:, 0, 2] * (2 * fx * X / Z3)
          + dJ[:, 1, 1] * (fy / Z2) + dJ[:, 1, 2] * (-2 * fy * Y / Z3))
    if d_depth is not None:
        dZ = dZ + d_depth
    d_mu_cam = np.stack([dX, dY, dZ], axis=1)
    d_mu_cam = np.where(vis[:, None], d_mu_cam, 0.0)
    Rw = camera.extrinsics[:3, :3]
    return d_mu_cam @ Rw, Rw.T @ d_sigma_cam @ Rw


# --------------------------------------------------------------------------
# compositing

@dataclass
class RenderedFrame:
    rgb: np.ndarray  # (H, W, 3)
    accumulated_alpha: np.ndarray  # (H, W)


@dataclass
class CompositeTape:
    order: np.ndarray
    patches: list  # (k, y0, y1, x0, x1, w, a, T_before) per drawn primitive
    conics: np.ndarray
    mu2d: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    shape: tuple


def _inverse2(cov):
    a, b, c, d = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 0], cov[:, 1, 1]
    det = a * d - b * c
    small = np.abs(det) < 1e-12
    if np.any(small):
        # near-singular footprint: add a tiny isotropic floor
        a = np.where(small, a + 1e-6, a)
        d = np.where(small, d + 1e-6, d)
        det = a * d - b * c
    inv = np.empty_like(cov)
    inv[:, 0, 0] = d / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -c / det
    inv[:, 1, 1] = a / det
    return inv


def _bounds(mu, cov, alpha, width, height, cutoff):
    if cutoff <= 0:
        return 0, height, 0, width
    if alpha <= cutoff:
        return None
    a, c = cov[0, 0], cov[1, 1]
    b = 0.5 * (cov[0, 1] + cov[1, 0])
    mid = 0.5 * (a + c)
    lam = mid + math.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = max(3.0, math.sqrt(2.0 * math.log(alpha / cutoff))) * math.sqrt(max(lam, 0.0))
    x0 = max(int(math.floor(mu[0] - radius - 0.5)), 0)
    x1 = min(int(math.ceil(mu[0] + radius + 0.5)), width)
    y0 = max(int(math.floor(mu[1] - radius - 0.5)), 0)
    y1 = min(int(math.ceil(mu[1] + radius + 0.5)), height)
    if x0 >= x1 or y0 >= y1:
        return None
    return y0, y1, x0, x1


def composite(mu2d, cov2d, depth, colors, opacities, width, height, background=(0.0, 0.0, 0.0),
              visible=None, cutoff=DEFAULT_CUTOFF, record=False):
    """Front-to-back alpha compositing of depth-sorted 2D Gaussians.

    Each primitive is evaluated only inside a box where ``opacity * kernel``
    can exceed ``cutoff`` (never smaller than 3 sigma); ``cutoff=0`` evaluates
    every primitive over the full image. Returns a :class:`RenderedFrame` and,
    when ``record`` is set, a :class:`CompositeTape` for the backward pass.
    """
    dtype = np.result_type(mu2d.dtype, np.float32)
    K = len(mu2d)
    if visible is None:
        visible = np.ones(K, dtype=bool)
    bg = np.asarray(background, dtype=dtype)
    image = np.zeros((height, width, 3), dtype=dtype)
    T = np.ones((height, width), dtype=dtype)
    xs = np.arange(width, dtype=dtype) + dtype.type(0.5)
    ys = np.arange(height, dtype=dtype) + dtype.type(0.5)
    order = np.argsort(depth, kind="stable")
    order = order[visible[order]]
    conics = _inverse2(cov2d) if K else np.zeros((0, 2, 2), dtype=dtype)
    patches = []
    for k in order:
        box = _bounds(mu2d[k], cov2d[k], float(opacities[k]), width, height, cutoff)
        if box is None:
            continue
        y0, y1, x0, x1 = box
        dx = xs[x0:x1][None, :] - mu2d[k, 0]
        dy = ys[y0:y1][:, None] - mu2d[k, 1]
        m = conics[k]
        power = -0.5 * (m[0, 0] * dx * dx + (m[0, 1] + m[1, 0]) * dx * dy + m[1, 1] * dy * dy)
        w = np.exp(power)
        a = 1.0 - np.exp(-opacities[k] * w)
        Tp = T[y0:y1, x0:x1]
        contrib = a * Tp
        image[y0:y1, x0:x1] += colors[k] * contrib[..., None]
        if record:
            patches.append((k, y0, y1, x0, x1, w, a, Tp.copy()))
        T[y0:y1, x0:x1] = Tp * (1.0 - a)
    image += bg * T[..., None]
    frame = RenderedFrame(image, 1.0 - T)
    if not record:
        return frame
    tape = CompositeTape(order, patches, conics, mu2d, colors, opacities, (height, width))
    return frame, tape


def composite_backward(tape, d_image, background=(0.0, 0.0, 0.0)):
    """VJP of :func:`composite`. Returns ``(d_mu2d, d_cov2d, d_colors, d_opacities)``.

    Walks primitives back to front keeping, per pixel, the colour seen behind
    the current primitive normalised by its transmittance, so the derivative
    with respect to each alpha is ``T_k (c_k - behind)`` without any division.
    """
    height, width = tape.shape
    K = len(tape.mu2d)
    dtype = d_image.dtype
    d_mu2d = np.zeros((K, 2), dtype=dtype)
    d_cov2d = np.zeros((K, 2, 2), dtype=dtype)
    d_colors = np.zeros((K, 3), dtype=dtype)
    d_opac = np.zeros(K, dtype=dtype)
    behind = np.empty((height, width, 3), dtype=dtype)
    behind[...] = np.asarray(background, dtype=dtype)
    xs = np.arange(width, dtype=dtype) + dtype.type(0.5)
    ys = np.arange(height, dtype=dtype) + dtype.type(0.5)
    for k, y0, y1, x0, x1, w, a, Tp in reversed(tape.patches):
        g = d_image[y0:y1, x0:x1]
        c = tape.colors[k]
        Rb = behind[y0:y1, x0:x1]
        contrib = a * Tp
        d_colors[k] = np.einsum("ij,ijc->c", contrib, g)
        d_a = Tp * np.einsum("ijc,ijc->ij", g, c - Rb)
        behind[y0:y1, x0:x1] = c * a[..., None] + (1.0 - a)[..., None] * Rb
        alpha = tape.opacities[k]
        e = 1.0 - a
        d_opac[k] = np.sum(d_a * w * e)
        d_power = d_a * alpha * e * w
        dx = xs[x0:x1][None, :] - tape.mu2d[k, 0]
        dy = ys[y0:y1][:, None] - tape.mu2d[k, 1]
        m = tape.conics[k]
        moff = 0.5 * (m[0, 1] + m[1, 0])
        d_mu2d[k, 0] = np.sum(d_power * (m[0, 0] * dx + moff * dy))
        d_mu2d[k, 1] = np.sum(d_power * (m[1, 1] * dy + moff * dx))
        sxx = -0.5 * np.sum(d_power * dx * dx)
        sxy = -0.5 * np.sum(d_power * dx * dy)
        syy = -0.5 * np.sum(d_power * dy * dy)
        dM = np.array([[sxx, sxy], [sxy, syy]], dtype=dtype)
        d_cov2d[k] = -m.T @ dM @ m.T
    return d_mu2d, d_cov2d, d_colors, d_opac


def composite_reference(mu2d, cov2d, depth, colors, opacities, width, height, background=(0.0, 0.0, 0.0),
                        visible=None):
    """Naive per-pixel evaluation over all primitives; test oracle only."""
    K = len(mu2d)
    if visible is None:
        visible = np.ones(K, dtype=bool)
    order = [k for k in sorted(range(K), key=lambda k: depth[k]) if visible[k]]
    inv = [np.linalg.inv(cov2d[k]) for k in range(K)]
    image = np.zeros((height, width, 3))
    acc = np.zeros((height, width))
    for i in range(height):
        for j in range(width):
            x = np.array([j + 0.5, i + 0.5])
            trans = 1.0
            pix = np.zeros(3)
            for k in order:
                d = x - mu2d[k]
                wk = math.exp(-0.5 * d @ inv[k] @ d)
                ak = 1.0 - math.exp(-opacities[k] * wk)
                pix += colors[k] * ak * trans
                trans *= 1.0 - ak
            image[i, j] = pix + np.asarray(background) * trans
            acc[i, j] = 1.0 - trans
    return RenderedFrame(image, acc)


def render_frame(posed, appearance, camera, background=(0.0, 0.0, 0.0), cutoff=DEFAULT_CUTOFF,
                 eps=COV2D_EPS, z_clip=Z_CLIP):
    """Project a posed set and composite it with the given per-primitive appearance."""
    proj = project_gaussians(posed.mu, posed.sigma, camera, eps, z_clip)
    return composite(proj.mu2d, proj.cov2d, proj.depth, appearance.colors, appearance.opacities,
                     camera.width, camera.height, background, proj.visible, cutoff)


def to_uint8(frame):
    return np.round(np.clip(frame.rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(frame, path):
    from PIL import Image

    Image.fromarray(to_uint8(frame), mode="RGB").save(path)


def save_float(frame, path):
    """Lossless float32 dump of the colour and alpha buffers (``.npz``)."""
    np.savez(path, rgb=frame.rgb.astype(np.float32), alpha=frame.accumulated_alpha.astype(np.float32))
