"""End-to-end toy classification through the renderer.

A linear-softmax head reads grid mean-pooled pixels of the rendered frames.
The cross-entropy is a stand-in consumer: its only job is to push image-space
gradients back into the renderer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import TrainingDivergedError
from .gradients import backward
from .optim import AdamWConfig, AdamWState, apply_update
from .rasterizer import Camera
from .renderer import Renderer
from .skeleton_io import prepare

log = logging.getLogger(__name__)


@dataclass
class ToyConfig:
    epochs: int = 30
    resolution: int = 64
    n_frames: int = 4
    grid: int = 4
    lr: float = 5e-3  # renderer
    head_lr: float = 2e-2
    weight_decay: float = 0.0
    freeze_head: bool = False
    head_init_std: float = 0.15
    n_samples: int = 10
    seed: int = 0
    fov_deg: float = 60.0


def pool(frames, grid):
    """(N, H, W, 3) frames -> grid x grid x 3 cell means averaged over frames, flattened."""
    imgs = np.stack([f.rgb for f in frames]).astype(np.float64)
    N, H, W, _ = imgs.shape
    cells = imgs.reshape(N, grid, H // grid, grid, W // grid, 3).mean(axis=(0, 2, 4))
    return cells.reshape(-1)


def pool_backward(d_feat, shape, grid):
    N, H, W = shape
    d = d_feat.reshape(grid, 1, grid, 1, 3) / (N * (H // grid) * (W // grid))
    d = np.broadcast_to(d, (grid, H // grid, grid, W // grid, 3)).reshape(H, W, 3)
    return np.broadcast_to(d, (N, H, W, 3))


def log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


@dataclass
class SurrogateHead:
    """``logits = W ((f - shift) / scale) + b`` with a frozen per-feature standardisation."""

    W: np.ndarray  # (C, F)
    b: np.ndarray  # (C,)
    shift: np.ndarray  # (F,)
    scale: np.ndarray  # (F,)

    @classmethod
    def init(cls, num_classes, features, std=0.15, seed=0):
        """``features`` is the (n, F) pooled matrix of the untrained renderer."""
        rng = np.random.default_rng(seed)
        F = features.shape[1]
        scale = features.std(axis=0)
        scale = np.where(scale > 1e-6, scale, 1.0)
        return cls(rng.normal(0.0, std, (num_classes, F)), np.zeros(num_classes), features.mean(axis=0), scale)

    def logits(self, f):
        return self.W @ ((f - self.shift) / self.scale) + self.b

    def input_grad(self, d_logits):
        return (self.W.T @ d_logits) / self.scale

    def parameters(self):
        return {"head/W": self.W, "head/b": self.b}


def _loss_and_grads(renderer, head, batches, labels, grid):
    """Mean cross-entropy, accuracy and gradients (renderer + head) over the full set."""
    total, correct = 0.0, 0
    grads = {}
    dW = np.zeros_like(head.W)
    db = np.zeros_like(head.b)
    n = len(batches)
    for batch, y in zip(batches, labels):
        out = renderer.render(batch, record=True)
        f = pool(out.frames, grid)
        fn = (f - head.shift) / head.scale
        lp = log_softmax(head.W @ fn + head.b)
        total -= lp[y]
        correct += int(np.argmax(lp) == y)
        d_logits = np.exp(lp)
        d_logits[y] -= 1.0
        d_logits /= n
        dW += np.outer(d_logits, fn)
        db += d_logits
        H, W = out.frames[0].rgb.shape[:2]
        d_img = pool_backward(head.input_grad(d_logits), (len(out.frames), H, W), grid)
        g = backward(out.tape, d_img)
        for name, arr in g.as_dict().items():
            if name in grads:
                grads[name] += arr
            else:
                grads[name] = arr.copy()
    grads["head/W"] = dW
    grads["head/b"] = db
    return total / n, correct / n, grads


def _family_norms(grads):
    fam = {}
    for name, g in grads.items():
        key = name.split("/", 1)[1] if not name.startswith(("modulator/", "head/")) else name
        fam[key] = fam.get(key, 0.0) + float(np.sum(g * g))
    return {k: float(np.sqrt(v)) for k, v in sorted(fam.items())}


def fit_toy_task(dataset, config=None, report_path=None, renderer=None):
    """Jointly fit renderer and head with full-batch AdamW; returns the list of epoch records.

    Each record holds ``epoch``, ``loss``, ``accuracy`` (both measured before
    that epoch's update) and ``grad_norms``. Raises
    :class:`TrainingDivergedError` on a non-finite loss.
    """
    config = config or ToyConfig()
    labels = [int(y) for _, y in dataset]
    classes = sorted(set(labels))
    if classes != list(range(len(classes))):
        raise ValueError("labels must be 0..C-1")
    renderer = renderer or Renderer(Camera.from_fov(config.resolution, fov_x_deg=config.fov_deg),
                                    n_samples=config.n_samples, seed=config.seed, dtype=np.float64)
    batches = [prepare(seq, n=config.n_frames, mode="deterministic") for seq, _ in dataset]
    feats = np.stack([pool(renderer.render(b).frames, config.grid) for b in batches])
    head = SurrogateHead.init(len(classes), feats, config.head_init_std, config.seed)
    opt_r = AdamWConfig(lr=config.lr, weight_decay=config.weight_decay)
    opt_h = AdamWConfig(lr=config.head_lr, weight_decay=0.0)
    st_r, st_h = AdamWState(), AdamWState()

    records = []
    sink = open(report_path, "w") if report_path else None
    try:
        for epoch in range(config.epochs):
            loss, acc, grads = _loss_and_grads(renderer, head, batches, labels, config.grid)
            rec = {"epoch": epoch, "loss": loss, "accuracy": acc, "grad_norms": _family_norms(grads)}
            if not np.isfinite(loss):
                rec["error"] = "non-finite loss"
                if sink:
                    sink.write(json.dumps(rec) + "\n")
                raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}", epoch=epoch, step=st_r.step)
            records.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            log.info("epoch %d loss %.6f acc %.3f", epoch, loss, acc)
            apply_update(renderer.parameters(), grads, st_r, config=opt_r)
            if not config.freeze_head:
                apply_update(head.parameters(), grads, st_h, config=opt_h)
    finally:
        if sink:
            sink.close()
    return ToyReport(records, head, renderer, asdict(config))


@dataclass
class ToyReport:
    records: list
    head: SurrogateHead
    renderer: Renderer
    config: dict

    @property
    def losses(self):
        return [r["loss"] for r in self.records]

    @property
    def final_accuracy(self):
        return self.records[-1]["accuracy"] if self.records else float("nan")
