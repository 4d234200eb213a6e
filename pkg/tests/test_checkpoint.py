import numpy as np
import pytest

from draction.checkpoint import load_checkpoint, save_checkpoint
from draction.errors import SchemaError
from draction.rasterizer import Camera
from draction.renderer import Renderer
from draction.skeleton_io import prepare
from draction.synthetic import make_custom_motion, make_motion


def test_roundtrip_renders_identically(tmp_path):
    r = Renderer(Camera.from_fov(40, 32), n_samples=6, seed=7)
    batches = [prepare(make_motion("smpl_22", num_frames=10), n=3), prepare(make_custom_motion(), n=3)]
    for b in batches:
        r.render(b)
    # perturb learnables so the test does not pass on defaults alone
    rng = np.random.default_rng(0)
    for arr in r.parameters().values():
        arr += 0.01 * rng.normal(size=arr.shape)
    path = save_checkpoint(r, tmp_path / "r.npz")
    back = load_checkpoint(path)
    assert back.parameters().keys() == r.parameters().keys()
    for k, v in r.parameters().items():
        assert np.array_equal(v, back.parameters()[k]), k
    for b in batches:
        for fa, fb in zip(r.render(b).frames, back.render(b).frames):
            assert np.array_equal(fa.rgb, fb.rgb)


def test_camera_override(tmp_path):
    r = Renderer(Camera.from_fov(32))
    r.render(prepare(make_motion("coco_17", num_frames=4), n=1))
    back = load_checkpoint(save_checkpoint(r, tmp_path / "r.npz"), camera=Camera.from_fov(16))
    assert back.camera.width == 16


def test_wrong_version(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, __meta__=np.array('{"version": "other"}'))
    with pytest.raises(SchemaError):
        load_checkpoint(p)
