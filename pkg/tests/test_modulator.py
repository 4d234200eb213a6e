import numpy as np
import pytest

from draction.modulator import (FAMILIES, HIDDEN, MIN_DEPTH_SPAN, ModulatorParams, blend_color, depth_colormap,
                                depth_colormap_backward, depth_range, depth_range_backward, gru_step,
                                gru_step_backward, init_modulator, modulate, modulate_backward, nfm_forward,
                                residual_mlp, residual_mlp_backward, sigmoid)


def test_init_shapes_and_seed():
    a = init_modulator(16, seed=3)
    b = init_modulator(16, seed=3)
    for k, v in a.arrays().items():
        assert np.array_equal(v, b.arrays()[k])
    assert a.gru_W_ih.shape == (3 * HIDDEN, 10)
    assert a.mlp_W2.shape == (5, 64)
    assert a.theta_mix.shape == ()
    assert set(sum(FAMILIES.values(), ())) == set(a.arrays())


def test_gru_matches_torch_cell(rng):
    torch = pytest.importorskip("torch")
    p = init_modulator(8, seed=1)
    cell = torch.nn.GRUCell(10, HIDDEN).double()
    with torch.no_grad():
        cell.weight_ih.copy_(torch.from_numpy(p.gru_W_ih))
        cell.weight_hh.copy_(torch.from_numpy(p.gru_W_hh))
        cell.bias_ih.copy_(torch.from_numpy(p.gru_b_ih))
        cell.bias_hh.copy_(torch.from_numpy(p.gru_b_hh))
    x = rng.normal(size=(7, 10))
    h = rng.normal(size=(7, HIDDEN))
    ours, _ = gru_step(p, x, h)
    ref = cell(torch.from_numpy(x), torch.from_numpy(h)).detach().numpy()
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def _fd(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    for i in range(arr.size):
        old = arr.flat[i]
        arr.flat[i] = old + h
        a = f()
        arr.flat[i] = old - h
        b = f()
        arr.flat[i] = old
        g.flat[i] = (a - b) / (2 * h)
    return g


def test_gru_bptt_fd(rng):
    """Three recurrent steps, loss on every hidden state."""
    p = init_modulator(4, seed=2)
    xs = rng.normal(size=(3, 5, 10))
    Gs = rng.normal(size=(3, 5, HIDDEN))

    def loss():
        h = np.zeros((5, HIDDEN))
        total = 0.0
        for x, G in zip(xs, Gs):
            h, _ = gru_step(p, x, h)
            total += np.sum(G * h)
        return total

    grads = p.zeros_like()
    h = np.zeros((5, HIDDEN))
    caches = []
    for x in xs:
        h, c = gru_step(p, x, h)
        caches.append(c)
    dh = np.zeros_like(h)
    dxs = []
    for c, G in zip(reversed(caches), reversed(Gs)):
        dx, dh = gru_step_backward(p, c, dh + G, grads)
        dxs.append(dx)
    for name in FAMILIES["gru"]:
        np.testing.assert_allclose(getattr(grads, name), _fd(loss, getattr(p, name)), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dxs[-1], _fd(loss, xs[0]), rtol=1e-6, atol=1e-8)


def test_residual_mlp_fd(rng):
    p = init_modulator(4, seed=3)
    h = rng.normal(size=(6, HIDDEN))
    G = rng.normal(size=(6, 5))

    def loss():
        return np.sum(G * residual_mlp(p, h)[0])

    grads = p.zeros_like()
    dh = residual_mlp_backward(p, residual_mlp(p, h)[1], G, grads)
    for name in FAMILIES["residual_mlp"]:
        np.testing.assert_allclose(getattr(grads, name), _fd(loss, getattr(p, name)), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dh, _fd(loss, h), rtol=1e-6, atol=1e-8)


def test_modulate_ranges_and_backward(rng):
    base = rng.normal(size=(9, 4))
    res = rng.normal(size=(9, 5))
    ac = rng.normal(size=9)
    c, a, cache = modulate(base, res, ac)
    assert np.all((c > 0) & (c < 1)) and np.all((a > 0) & (a < 1))
    Gc = rng.normal(size=(9, 3))
    Ga = rng.normal(size=9)

    def loss():
        c2, a2, _ = modulate(base, res, ac)
        return np.sum(Gc * c2) + np.sum(Ga * a2)

    d_base, d_res, d_ac = modulate_backward(cache, Gc, Ga)
    np.testing.assert_allclose(d_base, _fd(loss, base), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(d_res, _fd(loss, res), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(d_ac, _fd(loss, ac), rtol=1e-6, atol=1e-9)


def test_gate_suppresses_opacity():
    base = np.zeros((1, 4))
    _, hi, _ = modulate(base, np.array([[0, 0, 0, 0, 20.0]]))
    _, lo, _ = modulate(base, np.array([[0, 0, 0, 0, -20.0]]))
    assert lo[0] < 1e-8 < hi[0]


def test_sigmoid_extremes():
    x = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(sigmoid(x), [0.0, 0.5, 1.0])


# ---------------------------------------------------------------- colormap

def test_colormap_anchors():
    c = depth_colormap(np.array([1.0, 1.5, 2.0, 0.0, 9.0, 1.25]), 1.0, 2.0)
    np.testing.assert_allclose(c[0], [1, 0, 0])
    np.testing.assert_allclose(c[1], [0, 1, 0])
    np.testing.assert_allclose(c[2], [0, 0, 1])
    np.testing.assert_allclose(c[3], [1, 0, 0])  # clipped near
    np.testing.assert_allclose(c[4], [0, 0, 1])  # clipped far
    np.testing.assert_allclose(c[5], [0.5, 0.5, 0])


def test_colormap_requires_ordered_bounds():
    with pytest.raises(ValueError):
        depth_colormap(np.ones(2), 2.0, 2.0)


def test_depth_range_floor():
    z0, z1 = depth_range(np.full(10, 3.0))
    assert z1 - z0 == pytest.approx(MIN_DEPTH_SPAN)
    assert 0.5 * (z0 + z1) == pytest.approx(3.0)


def test_colormap_and_range_backward_fd(rng):
    d = rng.uniform(2.0, 4.0, size=30)
    G = rng.normal(size=(30, 3))

    def loss():
        return np.sum(G * depth_colormap(d, *depth_range(d)))

    zn, zf = depth_range(d)
    gd, gn, gf = depth_colormap_backward(d, zn, zf, G)
    total = gd + depth_range_backward(d, gn, gf)
    np.testing.assert_allclose(total, _fd(loss, d, 1e-7), rtol=1e-5, atol=1e-6)


def test_blend_color_limits(rng):
    a, b = rng.uniform(size=(4, 3)), rng.uniform(size=(4, 3))
    np.testing.assert_allclose(blend_color(a, b, -50.0), a, atol=1e-20)
    np.testing.assert_allclose(blend_color(a, b, 50.0), b, atol=1e-20)


def test_static_pose_constant_color_with_bias_only_network():
    p = init_modulator(6, seed=0)
    for name in ("gru_W_ih", "gru_W_hh", "mlp_W1", "mlp_W2"):
        getattr(p, name)[...] = 0.0
    feats = np.random.default_rng(0).normal(size=(5, 6))
    pos = np.ones((5, 3))
    vel = np.zeros((5, 3))
    h = np.zeros((5, HIDDEN))
    outs = []
    for _ in range(4):
        res, h, base = nfm_forward(p, feats, pos, vel, h)
        outs.append(modulate(base, res)[0])
    # zero MLP weights make the residuals depend on biases only, whatever the hidden state does
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], atol=0)


def test_astype_and_copy_are_independent():
    p = init_modulator(4)
    q = p.copy()
    q.app_W[0, 0] += 1
    assert p.app_W[0, 0] != q.app_W[0, 0]
    assert p.astype(np.float32).gru_W_hh.dtype == np.float32
    assert isinstance(p.zeros_like(), ModulatorParams)
