"""Fit the renderer and a surrogate linear head on the two-class toy task.

    python3 demos/train_toy.py [epochs]

The classes are "raise arm" and "kick". Only rendered pixels reach the head,
so any improvement with the head frozen comes from gradients flowing back
through the rasterizer into the renderer parameters.
"""
import sys

from draction.synthetic import make_toy_dataset
from draction.toy import ToyConfig, fit_toy_task


def main(epochs=30):
    data = make_toy_dataset()
    report = fit_toy_task(data, ToyConfig(epochs=int(epochs)))
    for r in report.records:
        print(f"epoch {r['epoch']:2d}  loss {r['loss']:.4f}  accuracy {r['accuracy']:.2f}")
    frozen = fit_toy_task(data, ToyConfig(epochs=5, freeze_head=True))
    print(f"frozen head: loss {frozen.losses[0]:.4f} -> {frozen.losses[-1]:.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
