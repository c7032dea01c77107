"""On-disk layout: scene bundles, feature sets, probe checkpoints.

A scene bundle is a directory with deterministic, atomically written files:

    scene.json                    spec, seed, aabb, normalization transform
    views/view_NNN/rgb.rnvt       f32 HxWx3 in [0,1]
    views/view_NNN/depth.rnvt     f64 HxW camera-frame z (0 = miss)
    views/view_NNN/pointmap.rnvt  f64 HxWx3 world coordinates
    views/view_NNN/labels.rnvt    i64 HxW instance ids (-1 = background)
    views/view_NNN/camera.json

Pointmap validity is recovered from depth > 0 on load.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import rnvt
from .camera import CameraPose
from .encoding import NormalizationTransform
from .errors import InputError
from .features import ChannelReducer, FeatureFamily
from .geometry import FeatureGrid, Pointmap
from .probe import ProbeDecoder
from .scene import RenderedView, SceneSpec, SyntheticScene

SCENE_FORMAT = "renov-scene"
SCENE_VERSION = 1


def view_dir(bundle: Path, index: int) -> Path:
    return Path(bundle) / "views" / f"view_{index:03d}"


def save_scene_bundle(
    bundle: Path,
    scene: SyntheticScene,
    views: list[RenderedView],
    transform: NormalizationTransform,
    meta: dict | None = None,
) -> None:
    bundle = Path(bundle)
    bundle.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "seed": scene.seed,
        "spec": scene.spec.to_dict(),
        "aabb": {
            "min": [float(v) for v in scene.aabb_min],
            "max": [float(v) for v in scene.aabb_max],
        },
        "normalization": transform.to_dict(),
        "background_rgb": [float(v) for v in scene.background_rgb],
        "n_views": len(views),
    }
    if meta:
        doc["meta"] = meta
    rnvt.write_json(bundle / "scene.json", doc)
    for i, view in enumerate(views):
        vdir = view_dir(bundle, i)
        vdir.mkdir(parents=True, exist_ok=True)
        rnvt.write_tensor(vdir / "rgb.rnvt", view.rgb.astype(np.float32))
        rnvt.write_tensor(vdir / "depth.rnvt", view.depth.astype(np.float64))
        rnvt.write_tensor(vdir / "pointmap.rnvt", view.pointmap.coords.astype(np.float64))
        rnvt.write_tensor(vdir / "labels.rnvt", view.labels.astype(np.int64))
        rnvt.write_json(vdir / "camera.json", view.camera.to_dict())


def load_scene_bundle(bundle: Path) -> tuple[dict, list[RenderedView]]:
    bundle = Path(bundle)
    doc = rnvt.read_json(bundle / "scene.json")
    if doc.get("format") != SCENE_FORMAT:
        raise InputError(f"{bundle} is not a scene bundle (field 'format')")
    views = []
    for i in range(int(doc["n_views"])):
        vdir = view_dir(bundle, i)
        rgb = rnvt.read_tensor(vdir / "rgb.rnvt").astype(np.float64)
        depth = rnvt.read_tensor(vdir / "depth.rnvt")
        coords = rnvt.read_tensor(vdir / "pointmap.rnvt")
        labels = rnvt.read_tensor(vdir / "labels.rnvt")
        camera = CameraPose.from_dict(rnvt.read_json(vdir / "camera.json"))
        views.append(RenderedView(
            rgb=rgb,
            depth=depth,
            pointmap=Pointmap(coords, depth > 0),
            labels=labels,
            camera=camera,
        ))
    return doc, views


def bundle_transform(doc: dict) -> NormalizationTransform:
    return NormalizationTransform.from_dict(doc["normalization"])


def bundle_spec(doc: dict) -> SceneSpec:
    return SceneSpec.from_dict(doc["spec"])


# ---------------------------------------------------------------------------
# feature sets

def save_feature_set(
    out: Path,
    family: FeatureFamily,
    patch_size: int,
    local_grids: list[FeatureGrid],
    reduced_grids: list[FeatureGrid] | None = None,
    reducer: ChannelReducer | None = None,
) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "family": family.to_dict(),
        "patch_size": patch_size,
        "n_views": len(local_grids),
        "c_local": local_grids[0].channels if local_grids else 0,
        "c_reduced": reduced_grids[0].channels if reduced_grids else None,
        "reducer_seed": reducer.seed if reducer else None,
    }
    rnvt.write_json(out / "manifest.json", manifest)
    for i, grid in enumerate(local_grids):
        rnvt.write_tensor(out / f"local_{i:03d}.rnvt", grid.tokens.astype(np.float64))
        rnvt.write_tensor(out / f"valid_{i:03d}.rnvt", grid.valid.astype(np.uint8))
    if reduced_grids:
        for i, grid in enumerate(reduced_grids):
            rnvt.write_tensor(out / f"reduced_{i:03d}.rnvt", grid.tokens.astype(np.float64))


def load_feature_set(path: Path) -> tuple[dict, list[FeatureGrid], list[FeatureGrid] | None]:
    path = Path(path)
    manifest = rnvt.read_json(path / "manifest.json")
    p = int(manifest["patch_size"])
    local, reduced = [], []
    for i in range(int(manifest["n_views"])):
        tokens = rnvt.read_tensor(path / f"local_{i:03d}.rnvt")
        valid = rnvt.read_tensor(path / f"valid_{i:03d}.rnvt").astype(bool)
        local.append(FeatureGrid(tokens, p, valid))
        rpath = path / f"reduced_{i:03d}.rnvt"
        if rpath.exists():
            reduced.append(FeatureGrid(rnvt.read_tensor(rpath), p, valid))
    return manifest, local, (reduced if reduced else None)


# ---------------------------------------------------------------------------
# probe checkpoints

def save_decoder(out: Path, decoder: ProbeDecoder, extra: dict | None = None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "patch_size": decoder.patch_size,
        "c_in": decoder.c_in,
        "c_red": decoder.c_red,
        "hidden": decoder.hidden,
        "attn_enabled": decoder.attn_enabled,
        "n_params": decoder.n_params,
        "params": decoder.param_names,
    }
    if extra:
        manifest["extra"] = extra
    rnvt.write_json(out / "manifest.json", manifest)
    for name in decoder.param_names:
        rnvt.write_tensor(out / f"{name}.rnvt", decoder.params[name].astype(np.float64))


def load_decoder(path: Path) -> ProbeDecoder:
    path = Path(path)
    manifest = rnvt.read_json(path / "manifest.json")
    params = {name: rnvt.read_tensor(path / f"{name}.rnvt") for name in manifest["params"]}
    return ProbeDecoder(
        patch_size=int(manifest["patch_size"]),
        c_in=int(manifest["c_in"]),
        c_red=int(manifest["c_red"]),
        hidden=int(manifest["hidden"]),
        attn_enabled=bool(manifest["attn_enabled"]),
        params=params,
    )
