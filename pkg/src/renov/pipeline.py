"""End-to-end protocols: suite generation, warping, probing, robustness.

These helpers wire the library stages into the evaluation protocols used by
the CLI and the acceptance suite: render an arc of views around a procedural
scene, extract a feature family, warp tokens (optionally dropping a fraction
of the cloud), train a per-scene reconstruction probe, and score PSNR/SSIM
per reference-view count.

Per-scene probes are trained on warps from one half of the arc and evaluated
on warps from held-out reference views, so families whose features carry no
cross-view signal cannot score via memorization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoding import NormalizationTransform, normalize_coords
from .errors import InputError
from .features import ChannelReducer, FeatureFamily, concat_global_local, extract_features, reduce_channels
from .geometry import (FeatureGrid, WarpedPlane, aggregate_pointmaps, rasterize,
                       subsample_points, token_anchors, token_feature_cloud)
from .metrics import psnr, ssim
from .probe import TrainConfig, eval_probe, train_probe
from .scene import RenderedView, SceneSpec, SyntheticScene, generate_scene, make_camera_arc, render_view


@dataclass(frozen=True)
class SuiteConfig:
    """Scene/arc geometry shared by the evaluation protocols."""

    res: int = 64
    patch: int = 8
    n_views: int = 16
    radius: float = 6.0
    fov_deg: float = 55.0
    span_deg: float = 60.0
    n_quads: int = 6
    palette_size: int = 0
    shading: float = 0.5


@dataclass(frozen=True)
class SceneData:
    scene: SyntheticScene
    views: list[RenderedView]
    transform: NormalizationTransform
    patch: int


def render_scene_data(seed: int, cfg: SuiteConfig, threads: int = 0) -> SceneData:
    scene = generate_scene(seed, SceneSpec(n_quads=cfg.n_quads, palette_size=cfg.palette_size,
                                           shading=cfg.shading))
    cams = make_camera_arc(scene, cfg.n_views, cfg.radius, cfg.fov_deg,
                           (cfg.res, cfg.res), cfg.span_deg)
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            views = list(pool.map(lambda c: render_view(scene, c), cams))
    else:
        views = [render_view(scene, c) for c in cams]
    transform = NormalizationTransform.from_aabb(scene.aabb_min, scene.aabb_max)
    return SceneData(scene, views, transform, cfg.patch)


def scene_family(family: FeatureFamily, scene_seed: int) -> FeatureFamily:
    """Per-scene variant of a family so per-view randomness differs across scenes."""
    return replace(family, seed=(family.seed * 1000003 + scene_seed) % (2**63))


def unified_grids(data: SceneData, family: FeatureFamily) -> list[FeatureGrid]:
    """T_n per view: local tokens stacked with the pooled global token."""
    fam = scene_family(family, data.scene.seed)
    return [concat_global_local(extract_features(v, fam, data.patch, data.transform))
            for v in data.views]


def reduced_grids(data: SceneData, family: FeatureFamily, c_red: int, reducer_seed: int
                  ) -> tuple[list[FeatureGrid], ChannelReducer]:
    grids = unified_grids(data, family)
    reducer = ChannelReducer.create(grids[0].channels, c_red, reducer_seed)
    return [reduce_channels(g, reducer) for g in grids], reducer


def feature_warp(
    data: SceneData,
    grids: list[FeatureGrid],
    refs: tuple[int, ...],
    target: int,
    remove_frac: float = 0.0,
    remove_seed: int = 0,
) -> WarpedPlane:
    """Warp reference-view tokens into the target camera at token resolution.

    remove_frac drops that fraction of the aggregated cloud (seeded, nested)
    before rasterization.
    """
    if not refs:
        raise InputError("need at least one reference view")
    cloud = token_feature_cloud([grids[i] for i in refs],
                                [data.views[i].pointmap for i in refs])
    if remove_frac > 0:
        cloud = subsample_points(cloud, 1.0 - remove_frac, remove_seed)
    cam_tok = data.views[target].camera.scaled(data.patch)
    return rasterize(cloud, cam_tok, (cam_tok.width, cam_tok.height))


def rgb_warp(
    data: SceneData,
    refs: tuple[int, ...],
    target: int,
    remove_frac: float = 0.0,
    remove_seed: int = 0,
) -> WarpedPlane:
    """Full-resolution RGB warp of reference pixels into the target camera."""
    if not refs:
        raise InputError("need at least one reference view")
    cloud = aggregate_pointmaps([data.views[i].pointmap for i in refs],
                                [data.views[i].rgb for i in refs])
    if remove_frac > 0:
        cloud = subsample_points(cloud, 1.0 - remove_frac, remove_seed)
    cam = data.views[target].camera
    return rasterize(cloud, cam, (cam.width, cam.height))


def condition_grids(data: SceneData, grids_red: list[FeatureGrid]) -> list[FeatureGrid]:
    """Per-view grids carrying [normalized anchor coords, reduced features] payloads."""
    out = []
    for view, grid in zip(data.views, grids_red):
        coords, avalid = token_anchors(view.pointmap, data.patch)
        norm = normalize_coords(coords, data.transform, avalid)
        out.append(FeatureGrid(np.concatenate([norm, grid.tokens], axis=2),
                               data.patch, avalid & grid.valid))
    return out


def warped_image_metrics(data: SceneData, refs: tuple[int, ...], target: int,
                         remove_frac: float = 0.0, remove_seed: int = 0) -> dict:
    """Table-style 'warped image' baseline: rasterized RGB with holes left as zeros."""
    plane = rgb_warp(data, refs, target, remove_frac, remove_seed)
    truth = data.views[target].rgb
    hole = plane.mask
    out = {
        "psnr": psnr(plane.payload, truth),
        "ssim": ssim(plane.payload, truth),
        "hole_fraction": plane.hole_fraction,
        "psnr_visible": psnr(plane.payload, truth, ~hole) if np.any(~hole) else None,
        "psnr_hole": psnr(plane.payload, truth, hole) if np.any(hole) else None,
    }
    return out


# ---------------------------------------------------------------------------
# probing protocols

@dataclass(frozen=True)
class ProbeProtocol:
    """Which (reference set, target) pairs train the probe and which score it.

    The canonical protocols fix ONE target view and vary the supplying
    reference subsets: training uses even arc views, evaluation uses odd
    (never-trained) ones.  That measures reference-robust reconstruction:
    multi-view-consistent features keep indexing the same target content no
    matter which view supplied them, while per-view random features arrive
    unseen and carry nothing.  train_pairs may attach a cloud-removal
    fraction per pair (hole augmentation for the degradation protocol).
    """

    train_pairs: tuple[tuple[tuple[int, ...], int, float], ...]
    eval_cases: tuple[tuple[tuple[int, ...], int], ...]

    TARGET = 8  # fixed target view on the 16-view arc

    @classmethod
    def fixed_target(cls, target: int = TARGET) -> "ProbeProtocol":
        refs = ((0,), (2,), (4,), (6,), (10,), (12,), (14,),
                (0, 4), (2, 6), (10, 14), (4, 12), (6, 10),
                (0, 6, 12), (2, 10, 14), (4, 6, 10))
        evals = (((7,), target), ((7, 9), target), ((7, 9, 11), target))
        return cls(tuple((r, target, 0.0) for r in refs), evals)

    @classmethod
    def robustness(cls, target: int = TARGET) -> "ProbeProtocol":
        # removal-augmented training so hole statistics at eval are in-domain
        refs_fracs = (((0,), 0.0), ((2,), 0.3), ((4,), 0.5), ((6,), 0.0),
                      ((10,), 0.3), ((12,), 0.5), ((14,), 0.0),
                      ((0, 4), 0.3), ((2, 6), 0.5), ((10, 14), 0.0),
                      ((0, 6, 12), 0.5), ((2, 10, 14), 0.3), ((4, 6, 10, 12), 0.5))
        evals = (((3, 7, 9, 11, 13), target),)
        return cls(tuple((r, target, f) for r, f in refs_fracs), evals)


def probe_scene_run(
    data: SceneData,
    family: FeatureFamily,
    cfg: TrainConfig,
    proto: ProbeProtocol,
    eval_remove: float = 0.0,
    remove_seed: int = 0,
):
    """Train a per-scene probe on warped tokens and evaluate held-out cases."""
    grids = unified_grids(data, family)
    dataset = []
    for k, (refs, tgt, frac) in enumerate(proto.train_pairs):
        plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=1000 + k)
        dataset.append((plane, data.views[tgt].rgb))
    decoder, curve = train_probe(dataset, cfg)
    samples = []
    for refs, tgt in proto.eval_cases:
        plane = feature_warp(data, grids, refs, tgt, eval_remove, remove_seed=remove_seed)
        samples.append((plane, data.views[tgt].rgb, len(refs)))
    report = eval_probe(decoder, samples)
    return decoder, curve, report


def family_suite_psnr(
    seeds: list[int],
    family: FeatureFamily,
    cfg: TrainConfig,
    suite: SuiteConfig,
    proto: ProbeProtocol | None = None,
) -> dict:
    """Mean probe PSNR over a suite of scenes, per view count and overall."""
    proto = proto or ProbeProtocol.fixed_target()
    per_scene = []
    by_views: dict[str, list[float]] = {}
    for seed in seeds:
        data = render_scene_data(seed, suite)
        _, _, report = probe_scene_run(data, family, cfg, proto)
        per_scene.append(report["mean_psnr"])
        for k, v in report["by_view_count"].items():
            by_views.setdefault(k, []).append(v["mean_psnr"])
    return {
        "mean_psnr": float(np.mean(per_scene)),
        "per_scene_psnr": per_scene,
        "by_view_count": {k: float(np.mean(v)) for k, v in sorted(by_views.items())},
    }


def robustness_run(
    seeds: list[int],
    family: FeatureFamily,
    cfg: TrainConfig,
    suite: SuiteConfig,
    remove_fracs: tuple[float, ...] = (0.3, 0.5),
) -> dict:
    """Probe PSNR with degraded clouds versus the no-removal baseline."""
    proto = ProbeProtocol.robustness()
    results: dict[str, list[float]] = {"0.0": []}
    for f in remove_fracs:
        results[str(f)] = []
    for seed in seeds:
        data = render_scene_data(seed, suite)
        grids = unified_grids(data, family)
        dataset = []
        for k, (refs, tgt, frac) in enumerate(proto.train_pairs):
            plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=1000 + k)
            dataset.append((plane, data.views[tgt].rgb))
        decoder, _ = train_probe(dataset, cfg)
        for frac_key, frac in [("0.0", 0.0)] + [(str(f), f) for f in remove_fracs]:
            samples = []
            for refs, tgt in proto.eval_cases:
                plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=seed)
                samples.append((plane, data.views[tgt].rgb, len(refs)))
            results[frac_key].append(eval_probe(decoder, samples)["mean_psnr"])
    baseline = float(np.mean(results["0.0"]))
    out = {"baseline_psnr": baseline, "removal": {}}
    for f in remove_fracs:
        mean_f = float(np.mean(results[str(f)]))
        out["removal"][str(f)] = {"psnr": mean_f, "delta_db": mean_f - baseline}
    return out
