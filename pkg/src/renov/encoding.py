"""Fourier positional embedding and condition-plane assembly.

The embedding expands every input channel into [x?, sin(b^0 pi x),
cos(b^0 pi x), ..., sin(b^(L-1) pi x), cos(b^(L-1) pi x)], channel blocks
kept contiguous.  Inputs are expected in [-1, 1]; out-of-range values are
accepted but counted into a log warning since the high frequencies alias.

Condition planes concatenate named channel groups: the per-view reference
condition is [geo, feat] (embedded coordinates then embedded features); the
warped target condition is [geo, feat, mask] where the trailing channel is
the hole indicator (1 where no point projected).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import FeatureGrid, WarpedPlane

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FourierConfig:
    num_freqs: int = 6
    include_raw: bool = True
    base: float = 2.0

    def __post_init__(self):
        if self.num_freqs < 1:
            raise InputError("num_freqs must be >= 1")

    @property
    def width_per_channel(self) -> int:
        return 2 * self.num_freqs + (1 if self.include_raw else 0)


def fourier_encode(x: np.ndarray, cfg: FourierConfig) -> np.ndarray:
    """Encode an (..., C) grid to (..., C * width_per_channel)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        x = x.reshape(1)
    n_out = np.count_nonzero(np.abs(x) > 1.0 + 1e-9)
    if n_out:
        log.warning("fourier_encode: %d of %d values outside [-1, 1]", n_out, x.size)
    freqs = np.pi * cfg.base ** np.arange(cfg.num_freqs, dtype=np.float64)
    ang = x[..., None] * freqs  # (..., C, L)
    sc = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(*ang.shape[:-1], 2 * cfg.num_freqs)
    if cfg.include_raw:
        sc = np.concatenate([x[..., None], sc], axis=-1)
    return sc.reshape(*x.shape[:-1], x.shape[-1] * cfg.width_per_channel)


@dataclass(frozen=True)
class NormalizationTransform:
    """Affine map taking a scene box into [-1, 1]^3 per axis."""

    center: np.ndarray
    half_extent: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        half = np.asarray(self.half_extent, dtype=np.float64).reshape(3)
        if np.any(half <= 0):
            raise InputError(f"half_extent must be strictly positive, got {half}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_extent", half)

    @classmethod
    def from_aabb(cls, aabb_min, aabb_max, min_half: float = 1e-6) -> "NormalizationTransform":
        lo = np.asarray(aabb_min, dtype=np.float64)
        hi = np.asarray(aabb_max, dtype=np.float64)
        return cls((lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, min_half))

    def to_dict(self) -> dict:
        return {"center": [float(v) for v in self.center],
                "half_extent": [float(v) for v in self.half_extent]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationTransform":
        return cls(np.asarray(d["center"]), np.asarray(d["half_extent"]))


def normalize_coords(coords: np.ndarray, t: NormalizationTransform, valid: np.ndarray | None = None) -> np.ndarray:
    """(x - center) / half_extent per axis; entries flagged invalid come out as 0."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 3:
        raise InputError(f"coords must have 3 channels, got shape {coords.shape}")
    out = (coords - t.center) / t.half_extent
    if valid is not None:
        out = np.where(np.asarray(valid, dtype=bool)[..., None], out, 0.0)
    return out


def denormalize_coords(coords: np.ndarray, t: NormalizationTransform) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 3:
        raise InputError(f"coords must have 3 channels, got shape {coords.shape}")
    return coords * t.half_extent + t.center


@dataclass(frozen=True)
class ConditionLayout:
    """Ordered named channel groups with offsets; round-trips through JSON."""

    groups: tuple[tuple[str, int, int], ...]  # (name, offset, width)

    @classmethod
    def build(cls, widths: list[tuple[str, int]]) -> "ConditionLayout":
        groups = []
        offset = 0
        for name, width in widths:
            groups.append((name, offset, width))
            offset += width
        return cls(tuple(groups))

    @property
    def total_channels(self) -> int:
        return sum(w for _, _, w in self.groups)

    def slice(self, name: str) -> slice:
        for gname, offset, width in self.groups:
            if gname == name:
                return slice(offset, offset + width)
        raise InputError(f"layout has no group '{name}'")

    def to_json(self) -> dict:
        return {"groups": [{"name": n, "offset": o, "width": w} for n, o, w in self.groups]}

    @classmethod
    def from_json(cls, d: dict) -> "ConditionLayout":
        return cls(tuple((g["name"], int(g["offset"]), int(g["width"])) for g in d["groups"]))


@dataclass(frozen=True)
class ConditionPlane:
    channels: np.ndarray  # hxwxC_cond
    layout: ConditionLayout

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.ndim != 3:
            raise InputError(f"condition channels must be hxwxC, got {channels.shape}")
        if channels.shape[2] != self.layout.total_channels:
            raise InputError(
                f"channel count {channels.shape[2]} != layout total {self.layout.total_channels}")
        object.__setattr__(self, "channels", channels)

    def group(self, name: str) -> np.ndarray:
        return self.channels[..., self.layout.slice(name)]


def build_reference_condition(
    pointmap_tokens: np.ndarray,
    features: FeatureGrid,
    geo_cfg: FourierConfig,
    feat_cfg: FourierConfig,
) -> ConditionPlane:
    """Per-view condition: embedded token coordinates then embedded features.

    `pointmap_tokens` are token-resolution coordinates already normalized to
    [-1, 1] with invalid anchors zeroed, so invalid tokens encode as the
    embedding of zeros; invalid feature tokens are zeroed the same way.
    """
    coords = np.asarray(pointmap_tokens, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[2] != 3:
        raise InputError(f"pointmap_tokens must be HtxWtx3, got {coords.shape}")
    if coords.shape[:2] != features.resolution:
        raise InputError(
            f"token resolution mismatch: coords {coords.shape[:2]} vs features {features.resolution}")
    feat = np.where(features.valid[..., None], features.tokens, 0.0)
    geo = fourier_encode(coords, geo_cfg)
    emb = fourier_encode(feat, feat_cfg)
    layout = ConditionLayout.build([("geo", geo.shape[2]), ("feat", emb.shape[2])])
    return ConditionPlane(np.concatenate([geo, emb], axis=2), layout)


def build_target_condition(
    warped: WarpedPlane,
    geo_cfg: FourierConfig,
    feat_cfg: FourierConfig,
    n_coord_channels: int = 3,
) -> ConditionPlane:
    """Warped-target condition: [geo, feat, mask].

    The warped payload must start with the coordinate channels (normalized
    world coordinates of the surviving points) followed by feature channels.
    Hole cells carry all-zero payload by construction, so their geo/feat
    groups are the embedding of zeros; the mask channel is 1 exactly there.
    """
    if n_coord_channels != 3:
        raise InputError("coordinate group must have 3 channels")
    if warped.payload.shape[2] < n_coord_channels:
        raise InputError(
            f"warped payload has {warped.payload.shape[2]} channels, missing coordinate channels")
    coords = warped.payload[..., :n_coord_channels]
    feats = warped.payload[..., n_coord_channels:]
    geo = fourier_encode(coords, geo_cfg)
    emb = fourier_encode(feats, feat_cfg)
    mask = warped.mask.astype(np.float64)[..., None]
    layout = ConditionLayout.build([("geo", geo.shape[2]), ("feat", emb.shape[2]), ("mask", 1)])
    return ConditionPlane(np.concatenate([geo, emb, mask], axis=2), layout)
