"""Synthetic token-feature families and channel reduction.

Families stand in for pretrained representations with controlled properties:

* ``oracle_geom`` -- Fourier embedding of each token's normalized anchor
  coordinates plus Gaussian noise sigma: perfectly multi-view consistent at
  sigma = 0, degrading as sigma grows.
* ``appearance``  -- per-patch color statistics (mean RGB, RGB variance,
  4-bin signed gradient orientation histograms per channel): appearance
  signal with no explicit geometry.
* ``random``      -- seeded Gaussian vectors drawn independently per view:
  the no-correspondence null hypothesis.
* ``mixed``       -- channel concatenation of oracle_geom and appearance.

Per-view randomness (noise and random tokens) is seeded by hashing the
camera parameters, so grids are a pure function of (scene, view, family).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .camera import CameraPose
from .encoding import FourierConfig, NormalizationTransform, fourier_encode, normalize_coords
from .errors import InputError
from .geometry import FeatureGrid, token_anchors
from .scene import RenderedView

FAMILY_KINDS = ("oracle_geom", "appearance", "random", "mixed")
APPEARANCE_CHANNELS = 18  # 3 mean + 3 variance + 3x4 gradient bins


@dataclass(frozen=True)
class FeatureFamily:
    kind: str
    sigma: float = 0.0  # oracle noise scale
    num_freqs: int = 4  # oracle embedding depth
    channels: int = 24  # random family width
    seed: int = 0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise InputError(f"unknown feature family '{self.kind}'")
        if self.sigma < 0:
            raise InputError("sigma must be non-negative")
        if self.channels < 1:
            raise InputError("random channel count must be >= 1")

    @property
    def channel_count(self) -> int:
        oracle = 3 * (2 * self.num_freqs + 1)
        return {
            "oracle_geom": oracle,
            "appearance": APPEARANCE_CHANNELS,
            "random": self.channels,
            "mixed": oracle + APPEARANCE_CHANNELS,
        }[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "num_freqs": self.num_freqs,
                "channels": self.channels, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureFamily":
        return cls(kind=d["kind"], sigma=float(d.get("sigma", 0.0)),
                   num_freqs=int(d.get("num_freqs", 4)), channels=int(d.get("channels", 24)),
                   seed=int(d.get("seed", 0)))


def _view_seed(camera: CameraPose, family_seed: int) -> int:
    """Stable per-view seed derived from camera parameters."""
    blob = camera.world_to_camera.tobytes() + struct.pack(
        "<4d2q", camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height)
    digest = hashlib.blake2b(blob, digest_size=8).digest()
    return (int.from_bytes(digest, "little") ^ (family_seed * 0x9E3779B97F4A7C15)) % (2**63)


def _patchify_stats(img: np.ndarray, p: int) -> np.ndarray:
    """Appearance statistics per PxP patch of an HxWx3 image -> (Ht, Wt, 18)."""
    h, w = img.shape[:2]
    ht, wt = h // p, w // p
    patches = img.reshape(ht, p, wt, p, 3)
    mean = patches.mean(axis=(1, 3))
    var = patches.var(axis=(1, 3))
    gy, gx = np.gradient(img, axis=(0, 1))
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)  # signed orientation in [-pi, pi]
    bins = np.clip(((theta + np.pi) / (np.pi / 2.0)).astype(np.int64), 0, 3)
    hist = np.zeros((ht, wt, 3, 4))
    bins_p = bins.reshape(ht, p, wt, p, 3)
    mag_p = mag.reshape(ht, p, wt, p, 3)
    for b in range(4):
        hist[..., b] = np.where(bins_p == b, mag_p, 0.0).sum(axis=(1, 3)) / (p * p)
    return np.concatenate([mean, var, hist.reshape(ht, wt, 12)], axis=2)


def extract_features(
    view: RenderedView,
    family: FeatureFamily,
    patch_size: int,
    transform: NormalizationTransform | None = None,
) -> FeatureGrid:
    """Local token grid t_l for one view.

    Geometry-based families (oracle_geom, mixed) need the scene normalization
    transform and are invalid wherever the patch-center pixel has no geometry;
    appearance and random tokens are always valid.
    """
    h, w = view.pointmap.resolution
    p = patch_size
    if h % p or w % p:
        raise InputError(f"view resolution {h}x{w} not divisible by patch size {p}")
    ht, wt = h // p, w // p

    if family.kind in ("oracle_geom", "mixed"):
        if transform is None:
            raise InputError(f"family '{family.kind}' requires a normalization transform")
        coords, valid = token_anchors(view.pointmap, p)
        # half-scale so the lowest base-2 frequency (period 2) stays aperiodic
        # over the whole scene: opposite box faces must not alias
        norm = 0.5 * normalize_coords(coords, transform, valid)
        cfg = FourierConfig(num_freqs=family.num_freqs, include_raw=True, base=2.0)
        tokens = fourier_encode(norm, cfg)
        if family.sigma > 0:
            rng = np.random.default_rng(_view_seed(view.camera, family.seed))
            tokens = tokens + family.sigma * rng.standard_normal(tokens.shape)
        tokens = np.where(valid[..., None], tokens, 0.0)
        oracle_grid = FeatureGrid(tokens, p, valid)
        if family.kind == "oracle_geom":
            return oracle_grid
        appearance = _patchify_stats(view.rgb, p)
        return FeatureGrid(
            np.concatenate([oracle_grid.tokens, appearance], axis=2), p, oracle_grid.valid)

    if family.kind == "appearance":
        return FeatureGrid(_patchify_stats(view.rgb, p), p, np.ones((ht, wt), dtype=bool))

    # random: independent per view so it carries no cross-view signal
    rng = np.random.default_rng(_view_seed(view.camera, family.seed))
    tokens = rng.standard_normal((ht, wt, family.channels))
    return FeatureGrid(tokens, p, np.ones((ht, wt), dtype=bool))


def concat_global_local(t_l: FeatureGrid) -> FeatureGrid:
    """Unified representation: global token (mean of valid locals) stacked on each local."""
    if not np.any(t_l.valid):
        raise InputError("cannot pool a grid with zero valid tokens")
    t_g = t_l.tokens[t_l.valid].mean(axis=0)
    global_half = np.broadcast_to(t_g, t_l.tokens.shape)
    return FeatureGrid(np.concatenate([global_half, t_l.tokens], axis=2), t_l.patch_size, t_l.valid)


@dataclass(frozen=True)
class ChannelReducer:
    """Fixed linear projection with orthonormal rows (never expands norms)."""

    matrix: np.ndarray  # (c_red, c_in)
    seed: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise InputError("reducer matrix must be 2-D")
        gram = m @ m.T
        if np.max(np.abs(gram - np.eye(m.shape[0]))) > 1e-6:
            raise InputError("reducer rows are not orthonormal within 1e-6")
        object.__setattr__(self, "matrix", m)

    @property
    def c_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def c_red(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def create(cls, c_in: int, c_red: int, seed: int) -> "ChannelReducer":
        if c_red > c_in:
            raise InputError(f"cannot orthonormalize {c_red} rows of dimension {c_in}")
        rng = np.random.default_rng(seed)
        gauss = rng.standard_normal((c_in, c_red))
        q, _ = np.linalg.qr(gauss)  # orthonormal columns
        return cls(q.T, seed)

    @classmethod
    def identity(cls, c: int) -> "ChannelReducer":
        """Test hook: C_red = C_in passthrough."""
        return cls(np.eye(c), seed=-1)


def reduce_channels(grid: FeatureGrid, reducer: ChannelReducer) -> FeatureGrid:
    if grid.channels != reducer.c_in:
        raise InputError(f"reducer expects {reducer.c_in} channels, grid has {grid.channels}")
    return FeatureGrid(grid.tokens @ reducer.matrix.T, grid.patch_size, grid.valid)
