"""Pointmap aggregation, projection, z-buffered rasterization, token warping.

The rasterizer splats each point into exactly one pixel (nearest-neighbor,
no footprint): holes are intentional and drive the visibility mask.  Depth
competition keeps the minimal camera-frame z; exact ties break toward the
smallest source index so output is independent of point order and of any
future parallel partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose
from .errors import InputError

Z_NEAR = 1e-6  # points at or behind the pinhole are never rasterized
DEPTH_EMPTY = np.inf


@dataclass(frozen=True)
class Pointmap:
    """Per-pixel world coordinates. Invalid entries are all-zero by convention."""

    coords: np.ndarray  # HxWx3
    valid: np.ndarray  # HxW bool

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise InputError(f"pointmap coords must be HxWx3, got {coords.shape}")
        if valid.shape != coords.shape[:2]:
            raise InputError("pointmap valid mask shape mismatch")
        if not np.all(np.isfinite(coords[valid])):
            raise InputError("pointmap has non-finite coords at valid entries")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.coords.shape[0], self.coords.shape[1]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # Mx3 world coordinates
    payload: np.ndarray  # MxC channels
    source_index: np.ndarray  # M, strictly increasing in insertion order

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        payload = np.asarray(self.payload, dtype=np.float64)
        if payload.ndim == 1:
            payload = payload[:, None]
        src = np.asarray(self.source_index, dtype=np.int64)
        if payload.shape[0] != points.shape[0] or src.shape[0] != points.shape[0]:
            raise InputError("point/payload/source_index row counts disagree")
        if src.size > 1 and not np.all(np.diff(src) > 0):
            raise InputError("source_index must be strictly increasing")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "source_index", src)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def channels(self) -> int:
        return self.payload.shape[1]


@dataclass(frozen=True)
class WarpedPlane:
    """Rasterization result: payload grid, depth buffer, and hole mask.

    mask is TRUE exactly where no point landed; payload is all-zero there and
    depth carries the +inf sentinel.
    """

    payload: np.ndarray  # hxwxC
    depth: np.ndarray  # hxw
    mask: np.ndarray  # hxw bool, TRUE = hole

    def __post_init__(self):
        payload = np.asarray(self.payload, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if payload.ndim != 3:
            raise InputError(f"warped payload must be hxwxC, got {payload.shape}")
        if depth.shape != payload.shape[:2] or mask.shape != payload.shape[:2]:
            raise InputError("warped plane field shapes disagree")
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)

    @property
    def hole_fraction(self) -> float:
        return float(np.mean(self.mask))


@dataclass(frozen=True)
class FeatureGrid:
    """Token-resolution feature tensor: one vector per PxP image patch."""

    tokens: np.ndarray  # (H/P)x(W/P)xC
    patch_size: int
    valid: np.ndarray  # (H/P)x(W/P) bool

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if tokens.ndim != 3:
            raise InputError(f"tokens must be HtxWtxC, got {tokens.shape}")
        if valid.shape != tokens.shape[:2]:
            raise InputError("feature grid valid mask shape mismatch")
        if self.patch_size < 1:
            raise InputError("patch_size must be >= 1")
        if not np.all(np.isfinite(tokens[valid])):
            raise InputError("non-finite tokens at valid positions")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "valid", valid)

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.tokens.shape[0], self.tokens.shape[1]


# ---------------------------------------------------------------------------
# operations

def aggregate_pointmaps(pointmaps: list[Pointmap], payloads: list[np.ndarray]) -> PointCloud:
    """Concatenate valid pixels of all views into one cloud.

    Points are emitted in view order then row-major pixel order; payload rows
    are copied verbatim; source_index is the global insertion ordinal.
    """
    if len(pointmaps) != len(payloads):
        raise InputError("pointmaps and payloads lists differ in length")
    pts, pays = [], []
    channels = None
    for pm, payload in zip(pointmaps, payloads):
        payload = np.asarray(payload, dtype=np.float64)
        if payload.ndim == 2:
            payload = payload[:, :, None]
        if payload.shape[:2] != pm.resolution:
            raise InputError(f"payload grid {payload.shape[:2]} does not match pointmap {pm.resolution}")
        if channels is None:
            channels = payload.shape[2]
        elif payload.shape[2] != channels:
            raise InputError(f"payload channel mismatch: {payload.shape[2]} vs {channels}")
        sel = pm.valid.reshape(-1)
        pts.append(pm.coords.reshape(-1, 3)[sel])
        pays.append(payload.reshape(-1, channels)[sel])
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    payload = np.concatenate(pays) if pays else np.zeros((0, 0))
    return PointCloud(points, payload, np.arange(points.shape[0], dtype=np.int64))


def project_points(cloud_points: np.ndarray | PointCloud, camera: CameraPose):
    """Project world points through a camera.

    Returns (u, v, z, valid): continuous pixel coordinates, camera-frame depth,
    and validity (z > Z_NEAR and floor(u), floor(v) inside the camera's image).
    """
    pts = cloud_points.points if isinstance(cloud_points, PointCloud) else np.asarray(cloud_points, dtype=np.float64)
    cam_pts = camera.world_to_cam_points(pts.reshape(-1, 3))
    z = cam_pts[:, 2]
    in_front = z > Z_NEAR
    z_safe = np.where(in_front, z, 1.0)
    u = camera.fx * cam_pts[:, 0] / z_safe + camera.cx
    v = camera.fy * cam_pts[:, 1] / z_safe + camera.cy
    valid = in_front.copy()
    with np.errstate(invalid="ignore"):
        ju = np.floor(u)
        jv = np.floor(v)
        valid &= (ju >= 0) & (ju < camera.width) & (jv >= 0) & (jv < camera.height)
    return u, v, z, valid


def rasterize(cloud: PointCloud, camera: CameraPose, res: tuple[int, int]) -> WarpedPlane:
    """Z-buffer splat of a cloud at the given resolution.

    Each valid projected point lands in pixel (floor(v), floor(u)); per pixel
    the minimal z wins, exact ties to the smallest source_index.
    """
    w, h = res
    if w < 1 or h < 1:
        raise InputError(f"rasterize resolution must be positive, got {res}")
    cam = CameraPose(camera.world_to_camera, camera.fx, camera.fy, camera.cx, camera.cy, w, h)
    u, v, z, valid = project_points(cloud, cam)

    payload = np.zeros((h, w, cloud.channels), dtype=np.float64)
    depth = np.full((h, w), DEPTH_EMPTY)
    mask = np.ones((h, w), dtype=bool)
    if np.any(valid):
        pix = (np.floor(v[valid]).astype(np.int64) * w + np.floor(u[valid]).astype(np.int64))
        zv = z[valid]
        src = cloud.source_index[valid]
        rows = np.nonzero(valid)[0]
        # lexicographic (pixel, z, source_index): first row per pixel is the winner
        order = np.lexsort((src, zv, pix))
        pix_sorted = pix[order]
        first = np.ones(pix_sorted.shape[0], dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win_rows = rows[order[first]]
        win_pix = pix_sorted[first]
        depth.reshape(-1)[win_pix] = zv[order[first]]
        payload.reshape(-1, cloud.channels)[win_pix] = cloud.payload[win_rows]
        mask.reshape(-1)[win_pix] = False
    return WarpedPlane(payload, depth, mask)


def token_anchors(pointmap: Pointmap, patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """3D anchor per token: the world point of its patch-center pixel.

    Returns (coords (Ht,Wt,3), valid (Ht,Wt)).  The anchor pixel of token
    (i, j) is (i*P + P//2, j*P + P//2).
    """
    h, w = pointmap.resolution
    p = patch_size
    if h % p or w % p:
        raise InputError(f"resolution {h}x{w} not divisible by patch size {p}")
    rows = np.arange(h // p) * p + p // 2
    cols = np.arange(w // p) * p + p // 2
    return pointmap.coords[np.ix_(rows, cols)], pointmap.valid[np.ix_(rows, cols)]


def token_feature_cloud(grids: list[FeatureGrid], pointmaps: list[Pointmap]) -> PointCloud:
    """Cloud of token features anchored at patch-center 3D points.

    Tokens with invalid anchors (or invalid features) are skipped.  Points are
    ordered view-by-view then row-major, matching aggregate_pointmaps.
    """
    if len(grids) != len(pointmaps):
        raise InputError("grids and pointmaps lists differ in length")
    if not grids:
        raise InputError("need at least one source view")
    p = grids[0].patch_size
    channels = grids[0].channels
    anchor_maps, payloads = [], []
    for grid, pm in zip(grids, pointmaps):
        if grid.patch_size != p:
            raise InputError("all grids must share one patch size")
        if grid.channels != channels:
            raise InputError("all grids must share one channel count")
        hp, wp = pm.resolution
        if (hp // p, wp // p) != grid.resolution:
            raise InputError(f"grid {grid.resolution} inconsistent with pointmap {pm.resolution} at P={p}")
        coords, avalid = token_anchors(pm, p)
        avalid = avalid & grid.valid
        anchor_maps.append(Pointmap(np.where(avalid[..., None], coords, 0.0), avalid))
        payloads.append(grid.tokens)
    return aggregate_pointmaps(anchor_maps, payloads)


def warp_features(
    grids: list[FeatureGrid],
    pointmaps: list[Pointmap],
    cameras_src: list[CameraPose],
    camera_tgt: CameraPose,
) -> WarpedPlane:
    """Anchor each token to its patch-center 3D point and rasterize into the target.

    Output resolution is (w/P, h/P) of the target camera with intrinsics
    divided by P.
    """
    if len(cameras_src) != len(grids):
        raise InputError("cameras_src length does not match grids")
    cloud = token_feature_cloud(grids, pointmaps)
    cam_tok = camera_tgt.scaled(grids[0].patch_size)
    return rasterize(cloud, cam_tok, (cam_tok.width, cam_tok.height))


def subsample_points(cloud: PointCloud, keep_fraction: float, seed: int) -> PointCloud:
    """Uniformly keep ceil(keep_fraction * M) points without replacement.

    Sampling is nested: for a fixed seed the kept set at a smaller fraction is
    a subset of the kept set at a larger one (prefix of one permutation), so
    coverage shrinks monotonically as points are removed.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise InputError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    m = len(cloud)
    k = int(np.ceil(keep_fraction * m))
    if k >= m:
        return cloud
    perm = np.random.default_rng(seed).permutation(m)
    sel = np.sort(perm[:k])
    return PointCloud(cloud.points[sel], cloud.payload[sel], cloud.source_index[sel])
