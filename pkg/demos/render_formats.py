"""Render one synthetic sequence per skeleton format with a single renderer.

    python3 demos/render_formats.py [out_dir]

Writes the bundled samples (NTU-style .skeleton, Kinect v1, COCO 2D, SMPL and
a custom 6-joint tree) and renders four frames of each into a contact sheet.
The same ``Renderer`` handles every topology; only the canonical primitive
set differs, and it is built on first use.
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from draction import Camera, Renderer, load_sequence, prepare
from draction.rasterizer import to_uint8
from draction.synthetic import write_samples


def main(out_dir="demo_out/formats"):
    out = Path(out_dir)
    samples = write_samples(out / "samples")
    renderer = Renderer(Camera.from_fov(160))
    rows = []
    for name, path in samples.items():
        batch = prepare(load_sequence(path), n=4)
        result = renderer.render(batch)
        print(f"{name:7s} {batch.topology.format_tag:13s} J={batch.topology.num_joints:2d} "
              f"K={result.num_primitives:3d} depth shift {batch.depth_shift:+.1f}")
        rows.append(np.concatenate([to_uint8(f) for f in result.frames], axis=1))
    sheet = out / "contact_sheet.png"
    Image.fromarray(np.concatenate(rows, axis=0)).save(sheet)
    print(f"contact sheet: {sheet}")


if __name__ == "__main__":
    main(*sys.argv[1:])
