"""Representation analysis: similarity maps, correspondence scoring, LDS.

Geometric correspondence is scored as PCK@tau in token units: queries are
tokens of view A whose anchor point is visible in view B (projected depth
agrees with B's rendered depth within 2 percent); the prediction is the
argmax of cosine similarity over B's valid tokens; a hit is a prediction
within Chebyshev distance tau of the token cell containing the projection.
Semantic correspondence replaces the geometric gate with instance labels.
LDS contrasts mean cosine similarity of nearby tokens (Chebyshev distance
<= r_local, excluding self) against far tokens (distance >= r_far).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import FeatureGrid, project_points, token_anchors
from .scene import RenderedView

DEPTH_REL_TOL = 0.02


@dataclass(frozen=True)
class QueryRecord:
    query_cell: tuple[int, int]
    predicted_cell: tuple[int, int]
    truth_cell: tuple[int, int] | None  # token cell for geometric, None for semantic
    hit: bool


@dataclass(frozen=True)
class CorrespondenceReport:
    pck_at_tau: float
    tau_tokens: int
    num_queries: int
    per_query: tuple[QueryRecord, ...]

    def to_dict(self) -> dict:
        return {
            "pck_at_tau": self.pck_at_tau,
            "tau_tokens": self.tau_tokens,
            "num_queries": self.num_queries,
            "per_query": [
                {
                    "query_cell": list(r.query_cell),
                    "predicted_cell": list(r.predicted_cell),
                    "truth_cell": None if r.truth_cell is None else list(r.truth_cell),
                    "hit": r.hit,
                }
                for r in self.per_query
            ],
        }


def _unit_rows(tokens: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(tokens, axis=-1, keepdims=True)
    return np.where(norms > 0, tokens / np.where(norms > 0, norms, 1.0), 0.0)


def cosine_similarity_map(query: np.ndarray, target: FeatureGrid) -> np.ndarray:
    """Cosine of one query vector against every target token; zero-norm cells score 0."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != target.channels:
        raise InputError(f"query has {query.shape[0]} channels, grid has {target.channels}")
    qn = np.linalg.norm(query)
    if qn == 0:
        raise InputError("query vector has zero norm")
    return _unit_rows(target.tokens) @ (query / qn)


def _argmax_cell(sim: np.ndarray, valid: np.ndarray) -> tuple[int, int]:
    masked = np.where(valid, sim, -2.0)  # below any cosine
    flat = int(np.argmax(masked))
    return flat // sim.shape[1], flat % sim.shape[1]


def geometric_correspondence_score(
    grid_a: FeatureGrid,
    grid_b: FeatureGrid,
    view_a: RenderedView,
    view_b: RenderedView,
    tau: int = 1,
    num_queries: int = 64,
    seed: int = 0,
) -> CorrespondenceReport:
    """PCK@tau of feature matching from A into B, gated to visible queries."""
    p = grid_a.patch_size
    if grid_b.patch_size != p:
        raise InputError("grids must share one patch size")
    anchors, avalid = token_anchors(view_a.pointmap, p)
    avalid = avalid & grid_a.valid
    ht, wt = grid_a.resolution
    cam_b = view_b.camera

    u, v, z, pvalid = project_points(anchors.reshape(-1, 3), cam_b)
    pvalid &= avalid.reshape(-1)
    # occlusion gate: projected depth must match B's rendered depth within 2%
    pi = np.clip(np.floor(v).astype(np.int64), 0, cam_b.height - 1)
    pj = np.clip(np.floor(u).astype(np.int64), 0, cam_b.width - 1)
    d_b = view_b.depth[pi, pj]
    visible = pvalid & (d_b > 0) & (np.abs(z - d_b) <= DEPTH_REL_TOL * d_b)

    eligible = np.nonzero(visible)[0]
    if eligible.size == 0:
        raise InputError("no query token of A is visible in B")
    rng = np.random.default_rng(seed)
    n = min(num_queries, eligible.size)
    chosen = rng.choice(eligible, size=n, replace=False)

    records = []
    hits = 0
    for idx in chosen:
        qi, qj = divmod(int(idx), wt)
        truth = (int(np.floor(v[idx] / p)), int(np.floor(u[idx] / p)))
        sim = cosine_similarity_map(grid_a.tokens[qi, qj], grid_b)
        pred = _argmax_cell(sim, grid_b.valid)
        hit = max(abs(pred[0] - truth[0]), abs(pred[1] - truth[1])) <= tau
        hits += hit
        records.append(QueryRecord((qi, qj), pred, truth, bool(hit)))
    return CorrespondenceReport(hits / n, tau, n, tuple(records))


def dominant_labels(labels: np.ndarray, patch_size: int) -> np.ndarray:
    """Majority instance label per PxP patch, ties resolved to the smaller id."""
    h, w = labels.shape
    p = patch_size
    if h % p or w % p:
        raise InputError(f"label map {h}x{w} not divisible by patch size {p}")
    ht, wt = h // p, w // p
    patches = labels.reshape(ht, p, wt, p).transpose(0, 2, 1, 3).reshape(ht, wt, p * p)
    out = np.empty((ht, wt), dtype=np.int64)
    for i in range(ht):
        for j in range(wt):
            vals, counts = np.unique(patches[i, j], return_counts=True)
            out[i, j] = vals[np.argmax(counts)]  # np.unique sorts, argmax takes first max
    return out


def semantic_correspondence_score(
    grid_a: FeatureGrid,
    grid_b: FeatureGrid,
    labels_a: np.ndarray,
    labels_b: np.ndarray,
    num_queries: int = 64,
    seed: int = 0,
) -> CorrespondenceReport:
    """Label-agreement PCK: a hit is an argmax cell whose dominant label matches the query's."""
    p = grid_a.patch_size
    if grid_b.patch_size != p:
        raise InputError("grids must share one patch size")
    dom_a = dominant_labels(np.asarray(labels_a), p)
    dom_b = dominant_labels(np.asarray(labels_b), p)
    if dom_a.shape != grid_a.resolution or dom_b.shape != grid_b.resolution:
        raise InputError("label maps inconsistent with grid resolutions")
    present_b = set(np.unique(dom_b).tolist())
    eligible_mask = grid_a.valid & np.isin(dom_a, sorted(present_b))
    eligible = np.nonzero(eligible_mask.reshape(-1))[0]
    if eligible.size == 0:
        raise InputError("no query token's dominant label appears in B")
    rng = np.random.default_rng(seed)
    n = min(num_queries, eligible.size)
    chosen = rng.choice(eligible, size=n, replace=False)

    ht, wt = grid_a.resolution
    records = []
    hits = 0
    for idx in chosen:
        qi, qj = divmod(int(idx), wt)
        sim = cosine_similarity_map(grid_a.tokens[qi, qj], grid_b)
        pred = _argmax_cell(sim, grid_b.valid)
        hit = int(dom_b[pred]) == int(dom_a[qi, qj])
        hits += hit
        records.append(QueryRecord((qi, qj), pred, None, bool(hit)))
    return CorrespondenceReport(hits / n, 0, n, tuple(records))


def lds_score(grid: FeatureGrid, r_local: int = 1, r_far: int = 4) -> float:
    """Mean(local cosine) minus mean(distant cosine), averaged over tokens.

    Local neighbours sit within Chebyshev distance r_local (self excluded),
    distant ones at distance >= r_far; only tokens with both neighbourhoods
    nonempty contribute.
    """
    if not r_far > r_local >= 1:
        raise InputError(f"need r_far > r_local >= 1, got r_local={r_local}, r_far={r_far}")
    ht, wt = grid.resolution
    if max(ht, wt) - 1 < r_far:
        raise InputError(f"grid {ht}x{wt} has no token pairs at distance >= {r_far}")
    ii, jj = np.nonzero(grid.valid)
    if ii.size == 0:
        raise InputError("grid has no valid tokens")
    units = _unit_rows(grid.tokens[ii, jj])
    cos = units @ units.T
    dist = np.maximum(
        np.abs(ii[:, None] - ii[None, :]),
        np.abs(jj[:, None] - jj[None, :]),
    )
    local = (dist <= r_local) & (dist > 0)
    far = dist >= r_far
    n_local = local.sum(axis=1)
    n_far = far.sum(axis=1)
    use = (n_local > 0) & (n_far > 0)
    if not np.any(use):
        raise InputError("no token has both a local and a distant neighbourhood")
    local_mean = (cos * local).sum(axis=1)[use] / n_local[use]
    far_mean = (cos * far).sum(axis=1)[use] / n_far[use]
    return float(np.mean(local_mean - far_mean))
