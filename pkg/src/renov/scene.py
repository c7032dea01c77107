"""Procedural scenes with exact ray-cast ground truth.

Scenes are collections of textured quads inside a fixed 10x10x10 world box
(coordinates in [-5, 5]^3).  The default layout is a room shell (five box
faces, cameras on the open side) plus free-floating content quads, which
guarantees full pixel coverage from any camera on the viewing arc and at
least one occlusion relationship.  Rendering casts one ray per pixel center
and keeps the nearest hit, producing RGB, camera-depth, an exact per-pixel
world-coordinate map, and instance labels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .camera import CameraPose, look_at
from .errors import InputError
from .geometry import Pointmap

WORLD_HALF = 5.0  # scene box is [-WORLD_HALF, WORLD_HALF]^3
_RAY_EPS = 1e-6


@dataclass(frozen=True)
class TextureSpec:
    kind: str  # "checker" | "noise"
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    cell_size: float
    noise_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checker", "noise"):
            raise InputError(f"unknown texture kind '{self.kind}'")
        if self.cell_size <= 0:
            raise InputError("texture cell_size must be positive")


@dataclass(frozen=True)
class Quad:
    """Parallelogram: corner + a*edge_u + b*edge_v for (a, b) in [0,1]^2."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: TextureSpec
    instance_id: int

    def __post_init__(self):
        for name in ("corner", "edge_u", "edge_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) < 1e-12:
            raise InputError(f"degenerate quad {self.instance_id}: edge_u x edge_v ~ 0")
        if self.instance_id < 0:
            raise InputError("instance_id must be non-negative")

    @property
    def vertices(self) -> np.ndarray:
        c, u, v = self.corner, self.edge_u, self.edge_v
        return np.stack([c, c + u, c + v, c + u + v])


@dataclass(frozen=True)
class SceneSpec:
    """Complexity knobs for generate_scene. n_quads counts content quads.

    palette_size > 0 draws all texture colors from one scene-wide palette of
    that many colors, producing repeated materials and ambiguous local
    appearance; 0 gives every quad an independent color pair.

    shading > 0 enables a headlight model (light colocated with the camera):
    pixel = texture * ((1 - shading) + shading * |cos incidence|), so the
    observed color of a surface point varies with viewpoint; 0 renders the
    raw texture.
    """

    n_quads: int = 6
    include_room: bool = True
    cell_range: tuple[float, float] = (0.3, 1.0)
    checker_prob: float = 0.6
    palette_size: int = 0
    shading: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            n_quads=int(d["n_quads"]),
            include_room=bool(d["include_room"]),
            cell_range=tuple(d["cell_range"]),
            checker_prob=float(d["checker_prob"]),
            palette_size=int(d.get("palette_size", 0)),
            shading=float(d.get("shading", 0.0)),
        )


@dataclass(frozen=True)
class SyntheticScene:
    quads: tuple[Quad, ...]
    background_rgb: tuple[float, float, float]
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    seed: int
    spec: SceneSpec

    @property
    def aabb_center(self) -> np.ndarray:
        return (self.aabb_min + self.aabb_max) / 2.0


@dataclass(frozen=True)
class RenderedView:
    rgb: np.ndarray  # HxWx3 in [0,1]
    depth: np.ndarray  # HxW camera-frame z, 0 where no hit
    pointmap: Pointmap
    labels: np.ndarray  # HxW instance ids, -1 background
    camera: CameraPose


# ---------------------------------------------------------------------------
# textures

_H1 = np.uint64(0x9E3779B97F4A7C15)
_H2 = np.uint64(0xC2B2AE3D27D4EB4F)
_H3 = np.uint64(0x165667B19E3779F9)


def _lattice_hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic hash of integer lattice coordinates to [0, 1)."""
    seed_term = np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    h = ix.astype(np.uint64) * _H1 + iy.astype(np.uint64) * _H2 + seed_term
    h ^= h >> np.uint64(33)
    h *= _H2
    h ^= h >> np.uint64(29)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(gx: np.ndarray, gy: np.ndarray, seed: int) -> np.ndarray:
    ix = np.floor(gx)
    iy = np.floor(gy)
    fx = gx - ix
    fy = gy - iy
    # offset keeps lattice indices positive so floor-based cells stay stable
    ix = ix.astype(np.int64) + (1 << 20)
    iy = iy.astype(np.int64) + (1 << 20)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _lattice_hash01(ix, iy, seed)
    v10 = _lattice_hash01(ix + 1, iy, seed)
    v01 = _lattice_hash01(ix, iy + 1, seed)
    v11 = _lattice_hash01(ix + 1, iy + 1, seed)
    return (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy


def texture_rgb(tex: TextureSpec, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate a texture at surface coordinates (s, t) in world units. Returns (...,3)."""
    ca = np.asarray(tex.color_a, dtype=np.float64)
    cb = np.asarray(tex.color_b, dtype=np.float64)
    if tex.kind == "checker":
        k = np.floor(s / tex.cell_size) + np.floor(t / tex.cell_size)
        pick = (k.astype(np.int64) % 2).astype(np.float64)
        return ca + pick[..., None] * (cb - ca)
    v = _value_noise(s / tex.cell_size, t / tex.cell_size, tex.noise_seed)
    return ca + v[..., None] * (cb - ca)


# ---------------------------------------------------------------------------
# generation

def _room_quads(rng: np.random.Generator, spec: SceneSpec, next_id: int,
                palette: np.ndarray | None) -> list[Quad]:
    h = WORLD_HALF
    faces = [
        ((-h, -h, h), (2 * h, 0, 0), (0, 2 * h, 0)),   # back wall z=+h
        ((-h, -h, -h), (0, 0, 2 * h), (0, 2 * h, 0)),  # left wall x=-h
        ((h, -h, -h), (0, 0, 2 * h), (0, 2 * h, 0)),   # right wall x=+h
        ((-h, -h, -h), (2 * h, 0, 0), (0, 0, 2 * h)),  # floor y=-h
        ((-h, h, -h), (2 * h, 0, 0), (0, 0, 2 * h)),   # ceiling y=+h
    ]
    return [
        Quad(np.array(c), np.array(u), np.array(v), _sample_texture(rng, spec, palette), next_id + k)
        for k, (c, u, v) in enumerate(faces)
    ]


def _sample_palette(rng: np.random.Generator, size: int) -> np.ndarray:
    """Mutually contrasting scene-wide colors (pairwise L1 distance >= 0.9)."""
    colors = [rng.uniform(0.05, 0.95, 3)]
    while len(colors) < size:
        for _ in range(200):
            cand = rng.uniform(0.0, 1.0, 3)
            if all(np.abs(cand - c).sum() >= 0.9 for c in colors):
                colors.append(cand)
                break
        else:
            colors.append(rng.uniform(0.0, 1.0, 3))  # give up on contrast for this slot
    return np.stack(colors)


def _sample_texture(rng: np.random.Generator, spec: SceneSpec, palette: np.ndarray | None) -> TextureSpec:
    kind = "checker" if rng.random() < spec.checker_prob else "noise"
    if palette is not None:
        ia = int(rng.integers(0, len(palette)))
        ib = int(rng.integers(0, len(palette) - 1))
        ib = ib + 1 if ib >= ia else ib
        color_a, color_b = palette[ia], palette[ib]
    else:
        color_a = rng.uniform(0.05, 0.95, 3)
        color_b = color_a
        for _ in range(100):
            color_b = rng.uniform(0.0, 1.0, 3)
            if np.abs(color_a - color_b).sum() >= 0.9:
                break
    cell = rng.uniform(*spec.cell_range)
    return TextureSpec(kind, tuple(color_a), tuple(color_b), float(cell), int(rng.integers(0, 2**31)))


def _random_frame(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two orthonormal directions spanning a random plane."""
    while True:
        u = rng.normal(size=3)
        nu = np.linalg.norm(u)
        if nu > 1e-6:
            u = u / nu
            break
    while True:
        w = rng.normal(size=3)
        w = w - np.dot(w, u) * u
        nw = np.linalg.norm(w)
        if nw > 1e-6:
            return u, w / nw


def generate_scene(seed: int, spec: SceneSpec) -> SyntheticScene:
    """Deterministically build a scene from (seed, spec).

    Content quads are confined so every vertex stays inside the world box.
    The first two content quads form an explicit occluder pair (one strictly
    in front of the other toward the camera side) when n_quads >= 2; with the
    room shell enabled any content quad already occludes the back wall.
    """
    if spec.n_quads < 1:
        raise InputError("spec.n_quads must be >= 1")
    rng = np.random.default_rng(seed)
    palette = _sample_palette(rng, spec.palette_size) if spec.palette_size > 0 else None
    quads: list[Quad] = []
    next_id = 0

    n_content = spec.n_quads
    if n_content >= 2:
        # explicit occluder pair: fronto-parallel backdrop + smaller quad in front
        z0 = rng.uniform(2.5, 4.0)
        w0, h0 = rng.uniform(3.0, 5.0, 2)
        cx0, cy0 = rng.uniform(-1.0, 1.0, 2)
        quads.append(Quad(
            np.array([cx0 - w0 / 2, cy0 - h0 / 2, z0]),
            np.array([w0, 0.0, 0.0]), np.array([0.0, h0, 0.0]),
            _sample_texture(rng, spec, palette), next_id))
        next_id += 1
        z1 = z0 - rng.uniform(1.0, 2.0)
        w1, h1 = rng.uniform(1.0, 2.2, 2)
        quads.append(Quad(
            np.array([cx0 - w1 / 2, cy0 - h1 / 2, z1]),
            np.array([w1, 0.0, 0.0]), np.array([0.0, h1, 0.0]),
            _sample_texture(rng, spec, palette), next_id))
        next_id += 1
        n_content -= 2

    for _ in range(n_content):
        u, v = _random_frame(rng)
        su, sv = rng.uniform(0.8, 2.8, 2)
        center = np.array([rng.uniform(-2.2, 2.2), rng.uniform(-2.2, 2.2), rng.uniform(-0.5, 2.2)])
        corner = center - (su * u + sv * v) / 2.0
        quads.append(Quad(corner, su * u, sv * v, _sample_texture(rng, spec, palette), next_id))
        next_id += 1

    if spec.include_room:
        quads.extend(_room_quads(rng, spec, next_id, palette))

    verts = np.concatenate([q.vertices for q in quads])
    background = tuple(rng.uniform(0.0, 1.0, 3))
    return SyntheticScene(
        quads=tuple(quads),
        background_rgb=background,
        aabb_min=verts.min(axis=0),
        aabb_max=verts.max(axis=0),
        seed=int(seed),
        spec=spec,
    )


# ---------------------------------------------------------------------------
# rendering

def render_view(scene: SyntheticScene, camera: CameraPose) -> RenderedView:
    """Cast one ray per pixel center, keep the nearest hit (ties to smaller id)."""
    h, w = camera.height, camera.width
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d_cam = np.stack([
        (jj + 0.5 - camera.cx) / camera.fx,
        (ii + 0.5 - camera.cy) / camera.fy,
        np.ones_like(jj),
    ], axis=-1).reshape(-1, 3)
    # d_cam has unit z, so the ray parameter equals camera-frame depth exactly
    d_world = d_cam @ camera.rotation
    origin = camera.center

    n_pix = h * w
    best_t = np.full(n_pix, np.inf)
    best_id = np.full(n_pix, np.iinfo(np.int64).max, dtype=np.int64)
    best_quad = np.full(n_pix, -1, dtype=np.int64)
    best_a = np.zeros(n_pix)
    best_b = np.zeros(n_pix)

    for qi, quad in enumerate(scene.quads):
        normal = np.cross(quad.edge_u, quad.edge_v)
        denom = d_world @ normal
        safe = np.abs(denom) > 1e-14
        t = np.where(safe, np.dot(quad.corner - origin, normal) / np.where(safe, denom, 1.0), np.inf)
        t_eval = np.where(safe, t, 0.0)
        p = origin + t_eval[:, None] * d_world
        rel = p - quad.corner
        g = np.array([
            [quad.edge_u @ quad.edge_u, quad.edge_u @ quad.edge_v],
            [quad.edge_u @ quad.edge_v, quad.edge_v @ quad.edge_v],
        ])
        ginv = np.linalg.inv(g)
        pu = rel @ quad.edge_u
        pv = rel @ quad.edge_v
        a = ginv[0, 0] * pu + ginv[0, 1] * pv
        b = ginv[1, 0] * pu + ginv[1, 1] * pv
        hit = safe & (t > _RAY_EPS) & (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        closer = hit & ((t < best_t) | ((t == best_t) & (quad.instance_id < best_id)))
        best_t[closer] = t[closer]
        best_id[closer] = quad.instance_id
        best_quad[closer] = qi
        best_a[closer] = a[closer]
        best_b[closer] = b[closer]

    covered = np.isfinite(best_t)
    rgb = np.tile(np.asarray(scene.background_rgb, dtype=np.float64), (n_pix, 1))
    shading = scene.spec.shading
    for qi, quad in enumerate(scene.quads):
        sel = best_quad == qi
        if not np.any(sel):
            continue
        s = best_a[sel] * np.linalg.norm(quad.edge_u)
        t = best_b[sel] * np.linalg.norm(quad.edge_v)
        color = texture_rgb(quad.texture, s, t)
        if shading > 0:
            normal = np.cross(quad.edge_u, quad.edge_v)
            normal = normal / np.linalg.norm(normal)
            d = d_world[sel]
            cos_inc = np.abs(d @ normal) / np.linalg.norm(d, axis=1)
            color = color * ((1.0 - shading) + shading * cos_inc)[:, None]
        rgb[sel] = color

    t_hit = np.where(covered, best_t, 0.0)
    depth = t_hit.reshape(h, w)
    coords = np.where(covered[:, None], origin + t_hit[:, None] * d_world, 0.0).reshape(h, w, 3)
    labels = np.where(covered, best_id, -1).reshape(h, w).astype(np.int64)
    return RenderedView(
        rgb=rgb.reshape(h, w, 3),
        depth=depth,
        pointmap=Pointmap(coords=coords, valid=covered.reshape(h, w)),
        labels=labels,
        camera=camera,
    )


def make_camera_arc(
    scene: SyntheticScene,
    n: int,
    radius: float,
    fov_deg: float,
    res: tuple[int, int],
    span_deg: float = 60.0,
) -> list[CameraPose]:
    """n cameras on a horizontal arc of the given angular span, all aimed at the scene center."""
    if n < 2:
        raise InputError(f"camera arc needs n >= 2, got {n}")
    if radius <= 0:
        raise InputError("camera arc radius must be positive")
    width, height = res
    center = scene.aabb_center
    span = math.radians(span_deg)
    cams = []
    for k in range(n):
        theta = -span / 2 + span * k / (n - 1)
        eye = center + radius * np.array([math.sin(theta), 0.0, -math.cos(theta)])
        cams.append(look_at(eye, center, fov_deg, width, height))
    return cams
