"""``draction`` command line: render, inspect, gradcheck, train-toy, bench.

Options can also come from a ``key = value`` config file (``--config`` or the
``DRACTION_CONFIG`` environment variable); command-line flags win. Failures
print one JSON object on stderr, e.g.
``{"error": "SchemaError", "exit_code": 2, "message": "..."}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .canonical import ScaleParams, adaptive_scales, primitive_count
from .checkpoint import camera_from_dict, load_checkpoint, renderer_config, renderer_from_config
from .errors import NumericalError
from .rasterizer import Camera, save_float, save_png
from .renderer import Renderer
from .skeleton_io import FORMAT_TAGS, load_sequence, prepare

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
CONFIG_ENV = "DRACTION_CONFIG"
MANIFEST_VERSION = "draction-manifest/1"

log = logging.getLogger("draction")


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# config file

def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CommandError(f"{path}:{lineno}: expected 'key = value'", EXIT_VALIDATION)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _truthy(value):
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CommandError(f"not a boolean: {value!r}", EXIT_VALIDATION)


def _apply_config(sub, values):
    """Install config values as parser defaults so that explicit flags still override them."""
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = known.get(key)
        if action is None:
            continue  # keys for other subcommands
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _truthy(value)
        elif action.nargs in ("+", "*"):
            conv = action.type or str
            defaults[key] = [conv(v) for v in value.replace(",", " ").split()]
        else:
            defaults[key] = value  # argparse applies ``type`` to string defaults
    sub.set_defaults(**defaults)


# --------------------------------------------------------------------------
# parser

def _add_render_options(p):
    p.add_argument("--format", dest="format_tag", choices=FORMAT_TAGS, default=None,
                   help="expected format tag (checked against the file)")
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--resolution", type=int, default=448)
    p.add_argument("--fov", type=float, default=60.0, help="field of view in degrees")
    p.add_argument("--n-samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampling", choices=("deterministic", "stochastic"), default="deterministic")
    p.add_argument("--checkpoint", default=None, help="learned parameters (.npz)")


def build_parser():
    parser = argparse.ArgumentParser(prog="draction", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help=f"key=value file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("render", help="render sampled frames to PNG")
    p.add_argument("input", nargs="?", default=None)
    _add_render_options(p)
    p.add_argument("--out", default="render_out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--float", dest="save_float", action="store_true", help="also write float .npz buffers")
    p.add_argument("--from-manifest", default=None, help="re-render exactly what a manifest describes")

    p = subs.add_parser("inspect", help="print topology, K, scales and camera")
    p.add_argument("input")
    _add_render_options(p)

    p = subs.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--family", action="append", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--per-array", type=int, default=12)
    p.add_argument("--fault", choices=("sign_flip",), default=None, help=argparse.SUPPRESS)

    p = subs.add_parser("train-toy", help="fit the synthetic two-class task")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--head-lr", type=float, default=2e-2)
    p.add_argument("--freeze-head", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="toy_out")

    p = subs.add_parser("bench", help="time the pipeline stages")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--resolution", type=int, nargs="+", default=[448])
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--n-samples", type=int, nargs="+", default=[10])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", dest="json_out", default=None)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    if cfg_path:
        try:
            values = read_config(cfg_path)
        except OSError as exc:
            raise CommandError(f"cannot read config {cfg_path}: {exc}", EXIT_IO) from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, values)
        args = parser.parse_args(argv)
        args.config = cfg_path
    return args


# --------------------------------------------------------------------------
# commands

def _make_renderer(args, width):
    camera = Camera.from_fov(width, fov_x_deg=args.fov)
    if args.checkpoint:
        return load_checkpoint(args.checkpoint, camera=camera)
    return Renderer(camera, n_samples=args.n_samples, seed=args.seed, threads=getattr(args, "threads", 1))


def cmd_render(args):
    t0 = time.perf_counter()
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        if manifest.get("version") != MANIFEST_VERSION:
            raise CommandError(f"{args.from_manifest}: not a render manifest", EXIT_VALIDATION)
        seq = load_sequence(manifest["input"], manifest["format_tag"])
        if manifest.get("checkpoint"):
            renderer = load_checkpoint(manifest["checkpoint"], camera=camera_from_dict(manifest["camera"]))
        else:
            renderer = renderer_from_config(manifest["renderer"])
        renderer.threads = args.threads
        sampling, n, seed = manifest["sampling"], manifest["frames"], manifest["seed"]
        input_path, checkpoint = manifest["input"], manifest.get("checkpoint")
    else:
        if args.input is None:
            raise CommandError("render needs an input file or --from-manifest", EXIT_VALIDATION)
        seq = load_sequence(args.input, args.format_tag)
        renderer = _make_renderer(args, args.resolution)
        renderer.threads = args.threads
        sampling, n, seed = args.sampling, args.frames, args.seed
        input_path, checkpoint = str(Path(args.input).resolve()), args.checkpoint
        if checkpoint:
            checkpoint = str(Path(checkpoint).resolve())
    t_load = time.perf_counter() - t0

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        batch = prepare(seq, n=n, mode=sampling, seed=seed)
    out = renderer.render(batch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tic = time.perf_counter()
    files = []
    for i, frame in enumerate(out.frames):
        name = f"frame_{i:04d}.png"
        save_png(frame, out_dir / name)
        files.append(name)
        if args.save_float:
            save_float(frame, out_dir / f"frame_{i:04d}.npz")
    timings = {"load": t_load, **out.timings, "write": time.perf_counter() - tic}
    topo = batch.topology
    manifest = {
        "version": MANIFEST_VERSION,
        "input": input_path,
        "format_tag": topo.format_tag,
        "topology": topo.to_dict(),
        "num_joints": topo.num_joints,
        "num_edges": topo.num_edges,
        "num_primitives": out.num_primitives,
        "num_persons_rendered": int(np.sum(batch.valid.any(axis=0))),
        "orientations": "present" if batch.rotations is not None else "absent",
        "frames": n,
        "frame_indices": batch.frame_indices.tolist(),
        "padded": bool(batch.padded),
        "sampling": sampling,
        "seed": seed,
        "depth_shift": batch.depth_shift,
        "camera": renderer.camera.to_dict(),
        "renderer": renderer_config(renderer),
        "checkpoint": checkpoint,
        "threads": renderer.threads,
        "timings_s": timings,
        "warnings": [str(w.message) for w in caught],
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(files)} frames ({renderer.camera.width}x{renderer.camera.height}, "
          f"K={out.num_primitives}) to {out_dir}")
    return EXIT_OK


def cmd_inspect(args):
    seq = load_sequence(args.input, args.format_tag)
    topo = seq.topology
    batch = prepare(seq, n=min(args.frames, seq.num_frames), mode="deterministic")
    persons = np.flatnonzero(batch.valid.any(axis=0))
    K = primitive_count(topo.num_joints, topo.num_edges, args.n_samples)
    camera = Camera.from_fov(args.resolution, fov_x_deg=args.fov)
    print(f"file:          {args.input}")
    print(f"format:        {topo.format_tag}")
    print(f"J={topo.num_joints}  |E|={topo.num_edges}  K={K} (n_samples={args.n_samples})")
    print(f"orientations:  {'present' if topo.has_orientations else 'absent'}")
    print(f"frames:        {seq.num_frames}  persons: {seq.num_persons} (valid: {len(persons)})")
    print(f"depth shift:   {batch.depth_shift:+.3f}")
    if len(persons):
        s = adaptive_scales(topo, batch.canonical_joints[persons[0]], ScaleParams(), args.n_samples)[:, 0]
        J = topo.num_joints
        for label, v in (("joint", s[:J]), ("bone", s[J:])):
            print(f"{label} scales:  min {v.min():.4f}  median {np.median(v):.4f}  max {v.max():.4f} m")
    print(f"camera:        {camera.width}x{camera.height}  fov {args.fov:g} deg  "
          f"f=({camera.fx:.3f}, {camera.fy:.3f})  c=({camera.cx:.1f}, {camera.cy:.1f})")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import FAMILY_NAMES, format_table, run_suite

    families = args.family or list(FAMILY_NAMES)
    bad = [f for f in families if f not in FAMILY_NAMES]
    if bad:
        raise CommandError(f"unknown family {bad[0]!r}; choose from {', '.join(FAMILY_NAMES)}", EXIT_VALIDATION)
    results = run_suite(families, seed=args.seed, h=args.step, per_array=args.per_array, fault=args.fault)
    if args.family:
        # an explicit selection reports only the main scene
        results = [r for r in results if "[" not in r.family]
    print(format_table(results))
    failing = [r for r in results if not r.passed]
    if failing:
        detail = "; ".join(f"{r.family} {r.worst.name}[{r.worst.index}] err={r.max_error:.2e}" for r in failing)
        raise CommandError(f"gradient check failed: {detail}", EXIT_NUMERICAL)
    return EXIT_OK


def cmd_train_toy(args):
    from .synthetic import make_toy_dataset
    from .toy import ToyConfig, fit_toy_task

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = ToyConfig(epochs=args.epochs, resolution=args.resolution, n_frames=args.frames, lr=args.lr,
                    head_lr=args.head_lr, freeze_head=args.freeze_head, seed=args.seed)
    data = make_toy_dataset(n_per_class=args.per_class, seed=args.seed)
    report = fit_toy_task(data, cfg, report_path=out_dir / "report.jsonl")
    from .checkpoint import save_checkpoint

    save_checkpoint(report.renderer, out_dir / "renderer.npz", extra={"toy_config": report.config})
    for r in report.records:
        print(f"epoch {r['epoch']:3d}  loss {r['loss']:.6f}  acc {r['accuracy']:.3f}")
    print(f"final accuracy {report.final_accuracy:.3f}")
    return EXIT_OK


def _bench_sequence(args):
    if args.input:
        return load_sequence(args.input)
    from .synthetic import make_motion

    return make_motion("kinect_v2_25", "raise_arm", num_frames=max(args.frames, 12), seed=args.seed)


def bench(seq, frames=12, resolutions=(448,), n_samples=(10,), repeats=5, threads=1, fov=60.0, seed=0):
    """Per-frame stage timings (mean and p95 over ``repeats``), one row per configuration."""
    batch = prepare(seq, n=frames, mode="deterministic")
    rows = []
    for ns in n_samples:
        for res in resolutions:
            r = Renderer(Camera.from_fov(res, fov_x_deg=fov), n_samples=ns, seed=seed, threads=threads)
            r.render(batch)  # warm-up and canonical instantiation
            stages = {"instantiate": [], "deform": [], "modulate": [], "rasterize": [], "total": []}
            K = 0
            for _ in range(repeats):
                tic = time.perf_counter()
                out = r.render(batch)
                total = time.perf_counter() - tic
                K = out.num_primitives
                for k in ("instantiate", "deform", "modulate", "rasterize"):
                    stages[k].append(out.timings[k] / frames)
                stages["total"].append(total / frames)
            rows.append({"resolution": res, "n_samples": ns, "K": K, "frames": frames,
                         **{f"{k}_ms": {"mean": 1e3 * float(np.mean(v)), "p95": 1e3 * float(np.percentile(v, 95))}
                            for k, v in stages.items()}})
    return rows


def cmd_bench(args):
    rows = bench(_bench_sequence(args), args.frames, args.resolution, args.n_samples, args.repeats,
                 args.threads, args.fov, args.seed)
    print(f"{'res':>5} {'K':>5}  {'per-frame ms (mean / p95)':<28} instantiate   deform  modulate  rasterize")
    for row in rows:
        t = row["total_ms"]
        print(f"{row['resolution']:>5} {row['K']:>5}  {t['mean']:>9.2f} / {t['p95']:<16.2f}"
              f"{row['instantiate_ms']['mean']:>10.3f} {row['deform_ms']['mean']:>8.3f} "
              f"{row['modulate_ms']['mean']:>9.3f} {row['rasterize_ms']['mean']:>10.3f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(rows, indent=2))
    return EXIT_OK


COMMANDS = {"render": cmd_render, "inspect": cmd_inspect, "gradcheck": cmd_gradcheck,
            "train-toy": cmd_train_toy, "bench": cmd_bench}


def _error(kind, code, message):
    print(json.dumps({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = parse_args(argv)
    except CommandError as exc:
        return _error(type(exc).__name__, exc.code, str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except CommandError as exc:
        return _error("CommandError", exc.code, str(exc))
    except NumericalError as exc:
        return _error(type(exc).__name__, EXIT_NUMERICAL, str(exc))
    except (ValueError, KeyError) as exc:
        return _error(type(exc).__name__, EXIT_VALIDATION, str(exc))
    except OSError as exc:
        return _error(type(exc).__name__, EXIT_IO, str(exc))


if __name__ == "__main__":
    sys.exit(main())
