import json

import numpy as np
import pytest

from draction.errors import TrainingDivergedError
from draction.synthetic import make_toy_dataset
from draction.toy import ToyConfig, fit_toy_task, pool, pool_backward


@pytest.fixture(scope="module")
def tiny():
    return make_toy_dataset(n_per_class=3, num_frames=12, seed=1)


def fast_config(**kw):
    base = dict(epochs=3, resolution=32, n_frames=2, n_samples=4)
    base.update(kw)
    return ToyConfig(**base)


def test_pool_backward_is_adjoint(rng):
    class F:
        def __init__(self, rgb):
            self.rgb = rgb

    imgs = rng.normal(size=(3, 8, 8, 3))
    d = rng.normal(size=4 * 4 * 3)
    lhs = float(d @ pool([F(i) for i in imgs], 4))
    rhs = float(np.sum(pool_backward(d, (3, 8, 8), 4) * imgs))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_zero_lr_is_bit_identical(tiny):
    rep = fit_toy_task(tiny, fast_config(lr=0.0, head_lr=0.0))
    assert len(set(rep.losses)) == 1


def test_single_class_loss_is_zero(tiny):
    data = [(s, 0) for s, y in tiny if y == 0]
    rep = fit_toy_task(data, fast_config(epochs=2))
    assert all(abs(x) < 1e-12 for x in rep.losses)


def test_report_lines(tiny, tmp_path):
    path = tmp_path / "r.jsonl"
    fit_toy_task(tiny, fast_config(), report_path=path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1, 2]
    assert {"loss", "accuracy", "grad_norms"} <= set(recs[0])
    assert "modulator/gru_W_hh" in recs[0]["grad_norms"]


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_aborts(tiny, tmp_path):
    from draction.rasterizer import Camera
    from draction.renderer import Renderer
    from draction.skeleton_io import prepare

    r = Renderer(Camera.from_fov(32), n_samples=4, dtype=np.float64)
    r.render(prepare(tiny[0][0], n=2))
    r.modulator.app_b[:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        fit_toy_task(tiny, fast_config(), report_path=tmp_path / "r.jsonl", renderer=r)
    assert info.value.epoch == 0
    assert "non-finite" in (tmp_path / "r.jsonl").read_text()


def test_labels_must_be_contiguous(tiny):
    with pytest.raises(ValueError):
        fit_toy_task([(s, y + 1) for s, y in tiny], fast_config())


def test_loss_decreases_short_run(tiny):
    rep = fit_toy_task(tiny, fast_config(epochs=4))
    assert all(b < a for a, b in zip(rep.losses, rep.losses[1:]))
