"""Command-line interface over the pipeline stages.

Every command prints exactly one JSON summary line to stdout and exits 0 on
success, 2 on malformed input (the message names the offending field), 3 on
numerical failure.  All outputs are deterministic given flags and seeds; the
seed flag falls back to the RENOV_SEED environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bundle, rnvt
from .analysis import (cosine_similarity_map, geometric_correspondence_score, lds_score,
                       semantic_correspondence_score)
from .encoding import (FourierConfig, build_reference_condition, build_target_condition,
                       normalize_coords)
from .errors import InputError, NumericalError
from .features import ChannelReducer, FeatureFamily, concat_global_local, extract_features, reduce_channels
from .geometry import token_anchors
from .pipeline import (ProbeProtocol, SceneData, condition_grids, feature_warp,
                       reduced_grids, rgb_warp, unified_grids)
from .probe import TrainConfig, eval_probe, train_probe
from .scene import SceneSpec, generate_scene, make_camera_arc, render_view


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RENOV_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise InputError(f"RENOV_SEED must be an integer, got '{env}'") from e
    return 0


def _parse_res(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise InputError(f"--res must look like 64x64, got '{text}'") from e


def _parse_refs(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t != "")
    except ValueError as e:
        raise InputError(f"--refs must be comma-separated integers, got '{text}'") from e


def _family_from(args, seed: int) -> FeatureFamily:
    return FeatureFamily(args.family, sigma=args.sigma, num_freqs=args.freqs,
                         channels=args.channels, seed=seed)


def _load_scene_data(path, patch: int) -> SceneData:
    doc, views = bundle.load_scene_bundle(Path(path))
    spec = bundle.bundle_spec(doc)
    scene = generate_scene(int(doc["seed"]), spec)
    return SceneData(scene, views, bundle.bundle_transform(doc), patch)


def _check_view_index(data: SceneData, idx: int, flag: str) -> None:
    if not 0 <= idx < len(data.views):
        raise InputError(f"{flag} index {idx} out of range for bundle with {len(data.views)} views")


# ---------------------------------------------------------------------------
# commands

def cmd_scene_gen(args) -> dict:
    seed = _seed_from(args)
    w, h = _parse_res(args.res)
    spec = SceneSpec(n_quads=args.quads, palette_size=args.palette, shading=args.shading)
    scene = generate_scene(seed, spec)
    cams = make_camera_arc(scene, args.views, args.radius, args.fov, (w, h), args.span)
    threads = args.threads if args.threads > 0 else (os.cpu_count() or 1)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            views = list(pool.map(lambda c: render_view(scene, c), cams))
    else:
        views = [render_view(scene, c) for c in cams]
    from .encoding import NormalizationTransform
    transform = NormalizationTransform.from_aabb(scene.aabb_min, scene.aabb_max)
    meta = {"radius": args.radius, "fov_deg": args.fov, "span_deg": args.span, "res": [w, h]}
    bundle.save_scene_bundle(Path(args.out), scene, views, transform, meta)
    return {"command": "scene-gen", "out": str(args.out), "seed": seed,
            "views": len(views), "res": [w, h], "quads": len(scene.quads)}


def cmd_features(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    family = _family_from(args, seed)
    local = [extract_features(v, family, args.patch, data.transform) for v in data.views]
    unified = [concat_global_local(g) for g in local]
    reducer = ChannelReducer.create(unified[0].channels, args.c_red, args.reducer_seed)
    reduced = [reduce_channels(g, reducer) for g in unified]
    out = Path(args.out) if args.out else Path(args.scene) / f"features_{args.family}_p{args.patch}"
    bundle.save_feature_set(out, family, args.patch, local, reduced, reducer)
    return {"command": "features", "out": str(out), "family": args.family,
            "views": len(local), "c_local": local[0].channels, "c_reduced": args.c_red}


def cmd_warp(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    refs = _parse_refs(args.refs)
    if not refs:
        raise InputError("--refs must name at least one reference view")
    for r in refs:
        _check_view_index(data, r, "--refs")
    _check_view_index(data, args.target, "--target")
    if not 0.0 <= args.remove < 1.0:
        raise InputError(f"--remove must be in [0, 1), got {args.remove}")
    if args.payload == "rgb":
        plane = rgb_warp(data, refs, args.target, args.remove, seed)
    else:
        family = _family_from(args, seed)
        grids, _ = reduced_grids(data, family, args.c_red, args.reducer_seed)
        plane = feature_warp(data, grids, refs, args.target, args.remove, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rnvt.write_tensor(out / "payload.rnvt", plane.payload)
    rnvt.write_tensor(out / "depth.rnvt", plane.depth)
    rnvt.write_tensor(out / "mask.rnvt", plane.mask.astype(np.uint8))
    if args.payload == "rgb":
        rnvt.write_ppm(out / "payload.ppm", np.clip(plane.payload, 0, 1))
    rnvt.write_json(out / "manifest.json", {
        "payload": args.payload, "refs": list(refs), "target": args.target,
        "remove": args.remove, "seed": seed, "hole_fraction": plane.hole_fraction,
    })
    return {"command": "warp", "out": str(out), "payload": args.payload,
            "refs": list(refs), "target": args.target, "remove": args.remove,
            "hole_fraction": plane.hole_fraction}


def cmd_condition(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    refs = _parse_refs(args.refs)
    if not refs:
        raise InputError("--refs must name at least one reference view")
    for r in refs:
        _check_view_index(data, r, "--refs")
    _check_view_index(data, args.target, "--target")
    family = _family_from(args, seed)
    grids, _ = reduced_grids(data, family, args.c_red, args.reducer_seed)
    geo_cfg = FourierConfig(num_freqs=args.geo_freqs)
    feat_cfg = FourierConfig(num_freqs=args.feat_freqs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ref_layout = None
    for r in refs:
        coords, avalid = token_anchors(data.views[r].pointmap, args.patch)
        norm = normalize_coords(coords, data.transform, avalid)
        plane = build_reference_condition(norm, grids[r], geo_cfg, feat_cfg)
        rnvt.write_tensor(out / f"cond_ref_{r:03d}.rnvt", plane.channels)
        ref_layout = plane.layout
    rnvt.write_json(out / "layout_ref.json", ref_layout.to_json())

    aug = condition_grids(data, grids)
    warped = feature_warp(data, aug, refs, args.target)
    tgt_plane = build_target_condition(warped, geo_cfg, feat_cfg)
    rnvt.write_tensor(out / "cond_target.rnvt", tgt_plane.channels)
    rnvt.write_json(out / "layout_target.json", tgt_plane.layout.to_json())
    return {"command": "condition", "out": str(out), "refs": list(refs),
            "target": args.target, "c_ref": ref_layout.total_channels,
            "c_target": tgt_plane.layout.total_channels,
            "target_hole_fraction": warped.hole_fraction}


def cmd_analyze(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    family = _family_from(args, seed)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    if args.metric == "lds":
        _check_view_index(data, args.view_a, "--view-a")
        grid = extract_features(data.views[args.view_a], family, args.patch, data.transform)
        score = lds_score(grid, args.r_local, args.r_far)
        summary = {"command": "analyze", "metric": "lds", "family": args.family,
                   "view": args.view_a, "r_local": args.r_local, "r_far": args.r_far,
                   "score": score}
        if out:
            rnvt.write_json(out / "lds.json", summary)
        return summary

    _check_view_index(data, args.view_a, "--view-a")
    _check_view_index(data, args.view_b, "--view-b")
    va, vb = data.views[args.view_a], data.views[args.view_b]
    ga = extract_features(va, family, args.patch, data.transform)
    gb = extract_features(vb, family, args.patch, data.transform)
    if args.metric == "corr":
        rep = geometric_correspondence_score(ga, gb, va, vb, args.tau, args.queries, seed)
    else:
        rep = semantic_correspondence_score(ga, gb, va.labels, vb.labels, args.queries, seed)
    summary = {"command": "analyze", "metric": args.metric, "family": args.family,
               "view_a": args.view_a, "view_b": args.view_b,
               "pck": rep.pck_at_tau, "tau": rep.tau_tokens, "num_queries": rep.num_queries}
    if out:
        rnvt.write_json(out / f"{args.metric}.json", rep.to_dict())
        with open(out / f"{args.metric}.csv.tmp", "w") as f:
            f.write("query_i,query_j,pred_i,pred_j,truth_i,truth_j,hit\n")
            for r in rep.per_query:
                truth = r.truth_cell if r.truth_cell is not None else ("", "")
                f.write(f"{r.query_cell[0]},{r.query_cell[1]},{r.predicted_cell[0]},"
                        f"{r.predicted_cell[1]},{truth[0]},{truth[1]},{int(r.hit)}\n")
        os.replace(out / f"{args.metric}.csv.tmp", out / f"{args.metric}.csv")
        if args.save_maps:
            for k, rec in enumerate(rep.per_query[:args.save_maps]):
                sim = cosine_similarity_map(ga.tokens[rec.query_cell], gb)
                rnvt.write_pgm(out / f"simmap_{k:03d}.pgm", (sim + 1.0) / 2.0)
    return summary


def _probe_cfg(args, seed: int) -> TrainConfig:
    return TrainConfig(steps=args.steps, learning_rate=args.lr, batch=args.batch,
                       seed=seed, attn_enabled=args.attn, c_red=args.c_red, hidden=args.hidden)


def _probe_protocol(data: SceneData, robustness: bool = False) -> ProbeProtocol:
    proto = ProbeProtocol.robustness() if robustness else ProbeProtocol.fixed_target()
    needed = 1 + max(max(max(r) for r, _, _ in proto.train_pairs),
                     max(max(r) for r, _ in proto.eval_cases), ProbeProtocol.TARGET)
    if len(data.views) < needed:
        raise InputError(f"--scene bundle has {len(data.views)} views; the probe protocol needs {needed}")
    return proto


def cmd_probe(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    family = _family_from(args, seed)
    cfg = _probe_cfg(args, seed)
    proto = _probe_protocol(data)
    grids = unified_grids(data, family)

    if args.mode == "train":
        dataset = []
        for k, (refs, tgt, frac) in enumerate(proto.train_pairs):
            plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=1000 + k)
            dataset.append((plane, data.views[tgt].rgb))
        decoder, curve = train_probe(dataset, cfg)
        out = Path(args.ckpt)
        bundle.save_decoder(out, decoder, extra={"family": family.to_dict(), "seed": seed})
        with open(out / "loss.csv.tmp", "w") as f:
            f.write("step,loss\n")
            for i, v in enumerate(curve):
                f.write(f"{i},{v}\n")
        os.replace(out / "loss.csv.tmp", out / "loss.csv")
        return {"command": "probe", "mode": "train", "ckpt": str(out),
                "family": args.family, "steps": cfg.steps,
                "n_params": decoder.n_params, "final_loss": curve[-1]}

    decoder = bundle.load_decoder(Path(args.ckpt))
    cases = proto.eval_cases if args.views == 0 else tuple(
        c for c in proto.eval_cases if len(c[0]) == args.views)
    if not cases:
        raise InputError(f"--views {args.views} selects no evaluation case")
    samples = []
    for refs, tgt in cases:
        plane = feature_warp(data, grids, refs, tgt, args.remove, remove_seed=seed)
        samples.append((plane, data.views[tgt].rgb, len(refs)))
    report = eval_probe(decoder, samples)
    if args.out:
        rnvt.write_json(Path(args.out), report)
    return {"command": "probe", "mode": "eval", "family": args.family,
            "mean_psnr": report["mean_psnr"],
            "by_view_count": {k: v["mean_psnr"] for k, v in report["by_view_count"].items()}}


def cmd_robustness(args) -> dict:
    seed = _seed_from(args)
    data = _load_scene_data(args.scene, args.patch)
    family = _family_from(args, seed)
    cfg = _probe_cfg(args, seed)
    proto = _probe_protocol(data, robustness=True)
    grids = unified_grids(data, family)
    dataset = []
    for k, (refs, tgt, frac) in enumerate(proto.train_pairs):
        plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=1000 + k)
        dataset.append((plane, data.views[tgt].rgb))
    decoder, _ = train_probe(dataset, cfg)

    def eval_at(frac: float) -> float:
        samples = []
        for refs, tgt in proto.eval_cases:
            plane = feature_warp(data, grids, refs, tgt, frac, remove_seed=seed)
            samples.append((plane, data.views[tgt].rgb, len(refs)))
        return eval_probe(decoder, samples)["mean_psnr"]

    baseline = eval_at(0.0)
    removal = {}
    for frac in args.remove:
        if not 0.0 <= frac < 1.0:
            raise InputError(f"--remove fractions must be in [0, 1), got {frac}")
        p = eval_at(frac)
        removal[str(frac)] = {"psnr": p, "delta_db": p - baseline}
    summary = {"command": "robustness", "family": args.family,
               "baseline_psnr": baseline, "removal": removal}
    if args.out:
        rnvt.write_json(Path(args.out), summary)
    return summary


# ---------------------------------------------------------------------------
# parser

def _add_family_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=["oracle_geom", "appearance", "random", "mixed"],
                   default="mixed")
    p.add_argument("--sigma", type=float, default=0.0, help="oracle noise scale")
    p.add_argument("--freqs", type=int, default=4, help="oracle embedding depth")
    p.add_argument("--channels", type=int, default=24, help="random family width")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--c-red", dest="c_red", type=int, default=32)
    p.add_argument("--reducer-seed", dest="reducer_seed", type=int, default=77)


def _add_probe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--attn", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="renov", description=__doc__)
    ap.add_argument("--seed", type=int, default=None,
                    help="global seed (falls back to RENOV_SEED, then 0)")
    ap.add_argument("--threads", type=int, default=0, help="0 = auto")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene-gen", help="generate and render a scene bundle")
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--res", default="64x64")
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=6.0)
    p.add_argument("--fov", type=float, default=55.0)
    p.add_argument("--span", type=float, default=60.0)
    p.add_argument("--quads", type=int, default=6)
    p.add_argument("--palette", type=int, default=0)
    p.add_argument("--shading", type=float, default=0.5)
    p.set_defaults(func=cmd_scene_gen)

    p = sub.add_parser("features", help="extract a feature family over a bundle")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", default=None)
    _add_family_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("warp", help="z-buffer warp of rgb or features into a target view")
    p.add_argument("--scene", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--payload", choices=["rgb", "features"], default="rgb")
    p.add_argument("--remove", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_family_flags(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("condition", help="assemble reference and warped-target conditions")
    p.add_argument("--scene", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--geo-freqs", dest="geo_freqs", type=int, default=6)
    p.add_argument("--feat-freqs", dest="feat_freqs", type=int, default=2)
    _add_family_flags(p)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("analyze", help="correspondence and self-similarity reports")
    p.add_argument("metric", choices=["corr", "semcorr", "lds"])
    p.add_argument("--scene", required=True)
    p.add_argument("--view-a", dest="view_a", type=int, default=2)
    p.add_argument("--view-b", dest="view_b", type=int, default=5)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--queries", type=int, default=64)
    p.add_argument("--r-local", dest="r_local", type=int, default=1)
    p.add_argument("--r-far", dest="r_far", type=int, default=4)
    p.add_argument("--out", default=None)
    p.add_argument("--save-maps", dest="save_maps", type=int, default=0,
                   help="export up to N similarity maps as PGM")
    _add_family_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("probe", help="train or evaluate the reconstruction probe")
    p.add_argument("mode", choices=["train", "eval"])
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--views", type=int, default=0, choices=[0, 1, 2, 3],
                   help="evaluate only this reference-view count (0 = all)")
    p.add_argument("--remove", type=float, default=0.0)
    p.add_argument("--out", default=None)
    _add_family_flags(p)
    _add_probe_flags(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("robustness", help="probe quality under point-cloud removal")
    p.add_argument("--scene", required=True)
    p.add_argument("--remove", type=float, nargs="+", default=[0.3, 0.5])
    p.add_argument("--out", default=None)
    _add_family_flags(p)
    _add_probe_flags(p)
    p.set_defaults(func=cmd_robustness)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        summary = args.func(args)
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
