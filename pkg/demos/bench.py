"""Per-frame render time against resolution and primitive count.

    python3 demos/bench.py

Resolution changes the pixel count fourfold between 224 and 448 while the
per-frame time changes far less; raising ``n_samples`` grows K instead.
"""
from draction.cli import bench
from draction.synthetic import make_motion


def main():
    seq = make_motion("kinect_v2_25", num_frames=40)
    rows = bench(seq, frames=12, resolutions=(224, 448), n_samples=(10, 40), repeats=3)
    print(f"{'res':>5} {'K':>5} {'mean ms':>9} {'p95 ms':>8}")
    for row in rows:
        t = row["total_ms"]
        print(f"{row['resolution']:>5} {row['K']:>5} {t['mean']:>9.2f} {t['p95']:>8.2f}")


if __name__ == "__main__":
    main()
