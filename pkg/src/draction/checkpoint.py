"""Renderer checkpoints: every learnable array in one ``.npz`` plus a JSON header."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .canonical import ScaleParams
from .errors import SchemaError
from .modulator import ModulatorParams
from .rasterizer import Camera
from .renderer import Renderer, topology_name
from .skeleton_io import Topology

CHECKPOINT_VERSION = "draction-ckpt/1"


def renderer_config(renderer):
    return {
        "camera": renderer.camera.to_dict(),
        "n_samples": renderer.n_samples,
        "feature_dim": renderer.feature_dim,
        "seed": renderer.seed,
        "scale_params": asdict(renderer.scale_params),
        "background": list(renderer.background),
        "cutoff": renderer.cutoff,
        "dtype": renderer.dtype.name,
    }


def save_checkpoint(renderer, path, extra=None):
    meta = {"version": CHECKPOINT_VERSION, "renderer": renderer_config(renderer), "canonical": [],
            "extra": extra or {}}
    for canon in renderer.canonical.values():
        J = canon.topology.num_joints
        # the first J primitives sit exactly on the rest-pose joints
        meta["canonical"].append({"name": topology_name(canon.topology), "topology": canon.topology.to_dict(),
                                  "rest_joints": canon.mu_c[:J].tolist()})
    arrays = {f"param::{k}": np.asarray(v) for k, v in renderer.parameters().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
    return Path(path)


def camera_from_dict(d):
    return Camera.from_fov(int(d["width"]), int(d["height"]), float(d["fov_x_deg"]), float(d["fov_y_deg"]),
                           np.asarray(d.get("extrinsics", np.eye(4))))


def renderer_from_config(cfg, modulator=None):
    return Renderer(camera_from_dict(cfg["camera"]), n_samples=cfg["n_samples"], feature_dim=cfg["feature_dim"],
                    seed=cfg["seed"], scale_params=ScaleParams(**cfg["scale_params"]), modulator=modulator,
                    background=tuple(cfg["background"]), cutoff=cfg["cutoff"], dtype=np.dtype(cfg["dtype"]))


def load_checkpoint(path, camera=None):
    """Rebuild a :class:`Renderer`; ``camera`` overrides the stored one."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: not a {CHECKPOINT_VERSION} file")
        params = {k[len("param::"):]: data[k] for k in data.files if k.startswith("param::")}
    mod = ModulatorParams(**{k.split("/", 1)[1]: v.astype(np.float64) for k, v in params.items()
                             if k.startswith("modulator/")})
    cfg = dict(meta["renderer"])
    renderer = renderer_from_config(cfg, mod)
    if camera is not None:
        renderer.camera = camera
    for entry in meta["canonical"]:
        topo = Topology.from_dict(entry["topology"])
        canon = renderer.canonical_for(topo, np.asarray(entry["rest_joints"]))
        for name, arr in canon.learnables().items():
            key = f"{entry['name']}/{name}"
            if key not in params:
                raise SchemaError(f"{path}: missing array {key}")
            arr[...] = params[key]
    return renderer
