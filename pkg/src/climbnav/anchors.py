"""Anchor-point risk scoring and culling.

Every mesh vertex gets a risk ``r`` in [0, 1] (0 = safest) mixing two terms:

* flatness -- RMS distance of the nearby vertices from their best-fit plane,
  relative to the neighbourhood radius, then normalised by the scene's
  95th percentile;
* height risk -- where the vertex sits between the highest and lowest
  vertex of its horizontal window (1 = lowest, where loose regolith collects).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .mesh import TriangleMesh

FLATNESS_MAX = 1.0  # residual/radius can never exceed 1; given to isolated vertices
FLATNESS_PERCENTILE = 95.0
MIN_PLANE_NEIGHBOURS = 3


@dataclass(frozen=True)
class ScoreWeights:
    flatness: float = 0.5
    height: float = 0.5

    def __post_init__(self):
        if self.flatness < 0 or self.height < 0:
            raise ValueError("weights must be non-negative")
        if not math.isclose(self.flatness + self.height, 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("weights must sum to 1")


@dataclass(frozen=True)
class ScoreRadii:
    flatness: float = 0.3  # neighbourhood ball for the plane fit (m)
    height: float = 0.5    # horizontal window for relative height (m)


@dataclass(frozen=True)
class AnchorPoint:
    id: int
    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    flatness: float
    height_risk: float
    r: float


@dataclass
class AnchorSet:
    """Column-oriented collection of anchor points."""

    ids: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    flatness: np.ndarray
    height_risk: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = len(self.ids)
        self.positions = np.asarray(self.positions, dtype=float).reshape(n, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(n, 3)
        self.flatness = np.asarray(self.flatness, dtype=float).reshape(n)
        self.height_risk = np.asarray(self.height_risk, dtype=float).reshape(n)
        self.r = np.asarray(self.r, dtype=float).reshape(n)
        if len(np.unique(self.ids)) != n:
            raise ValueError("anchor ids must be unique")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> AnchorPoint:
        return AnchorPoint(
            int(self.ids[i]),
            tuple(float(v) for v in self.positions[i]),
            tuple(float(v) for v in self.normals[i]),
            float(self.flatness[i]),
            float(self.height_risk[i]),
            float(self.r[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, rows) -> "AnchorSet":
        rows = np.asarray(rows, dtype=np.int64)
        return AnchorSet(self.ids[rows], self.positions[rows], self.normals[rows],
                         self.flatness[rows], self.height_risk[rows], self.r[rows])

    @classmethod
    def concat(cls, *sets: "AnchorSet") -> "AnchorSet":
        return cls(*(np.concatenate([getattr(s, f) for s in sets])
                     for f in ("ids", "positions", "normals", "flatness", "height_risk", "r")))

    @classmethod
    def from_points(cls, points, r=0.0, ids=None, normals=None) -> "AnchorSet":
        """Ad-hoc anchors at given positions (tests, robot footholds)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(pts)
        ids = np.arange(n) if ids is None else ids
        normals = np.tile([0.0, 0.0, 1.0], (n, 1)) if normals is None else normals
        r = np.broadcast_to(np.asarray(r, dtype=float), (n,))
        return cls(ids, pts, normals, np.zeros(n), np.zeros(n), r)


def _up_basis(up):
    up = np.asarray(up, dtype=float).reshape(3)
    up = up / np.linalg.norm(up)
    helper = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    return up, e1, e2


def _neighbour_matrix(points, radius):
    """Symmetric 0/1 CSR matrix of pairs within ``radius``, self included."""
    n = len(points)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def flatness_scores(vertices, radius: float) -> np.ndarray:
    """Plane-fit RMS residual over each vertex's ``radius`` ball, divided by ``radius``."""
    pts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0)
    centre = pts.mean(axis=0)
    local = pts - centre  # conditioning for the second moments
    adj = _neighbour_matrix(pts, radius)
    count = np.asarray(adj.sum(axis=1)).ravel()
    s1 = adj @ local
    outer = (local[:, :, None] * local[:, None, :]).reshape(-1, 9)
    s2 = (adj @ outer).reshape(-1, 3, 3)
    mean = s1 / count[:, None]
    cov = s2 / count[:, None, None] - mean[:, :, None] * mean[:, None, :]
    lam = np.linalg.eigvalsh(cov)[:, 0]
    # one-pass moments lose ~eps * |local|^2; anything below that is a plane
    floor = 16 * np.finfo(float).eps * np.einsum("ij,ij->i", local, local).max()
    lam[lam <= floor] = 0.0
    score = np.sqrt(lam) / radius
    # the vertex itself is in ``count``; fewer than 3 others cannot define a plane
    score[count - 1 < MIN_PLANE_NEIGHBOURS] = FLATNESS_MAX
    return np.minimum(score, FLATNESS_MAX)


def score_flatness(mesh: TriangleMesh, vertex: int, neighborhood_radius: float) -> float:
    """Flatness score of a single mesh vertex (see :func:`flatness_scores`)."""
    pts = mesh.vertices
    d = np.linalg.norm(pts - pts[vertex], axis=1)
    hood = pts[d <= neighborhood_radius]
    if len(hood) - 1 < MIN_PLANE_NEIGHBOURS:
        return FLATNESS_MAX
    c = hood - hood.mean(axis=0)
    lam = np.linalg.eigvalsh(c.T @ c / len(hood))[0]
    return float(min(math.sqrt(max(lam, 0.0)) / neighborhood_radius, FLATNESS_MAX))


def height_risks(vertices, window_radius: float, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """``(h_max - h) / (h_max - h_min)`` over each vertex's horizontal window."""
    pts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0)
    up, e1, e2 = _up_basis(up)
    h = pts @ up
    flat = np.stack([pts @ e1, pts @ e2], axis=1)
    pairs = cKDTree(flat).query_pairs(window_radius, output_type="ndarray")
    n = len(pts)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
    # window max/min over integer height ranks (1-based so implicit zeros never
    # win), which keeps the looked-up heights exact
    order = np.argsort(h, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    up_rank = (rank[cols] + 1).astype(float)
    down_rank = (n - rank[cols]).astype(float)
    top = sparse.csr_matrix((up_rank, (rows, cols)), shape=(n, n)).max(axis=1).toarray().ravel()
    bottom = sparse.csr_matrix((down_rank, (rows, cols)), shape=(n, n)).max(axis=1).toarray().ravel()
    hmax = h[order[top.astype(np.int64) - 1]]
    hmin = h[order[n - bottom.astype(np.int64)]]
    span = hmax - hmin
    out = np.zeros(n)
    ok = span > 0
    out[ok] = (hmax[ok] - h[ok]) / span[ok]
    return np.clip(out, 0.0, 1.0)


def score_relative_height(mesh: TriangleMesh, vertex: int, window_radius: float,
                          up=(0.0, 0.0, 1.0)) -> float:
    """Relative-height risk of a single vertex (0 = highest in its window)."""
    up, e1, e2 = _up_basis(up)
    pts = mesh.vertices
    h = pts @ up
    flat = np.stack([pts @ e1, pts @ e2], axis=1)
    d = np.linalg.norm(flat - flat[vertex], axis=1)
    win = h[d <= window_radius]
    hmax, hmin = win.max(), win.min()
    if hmax == hmin:
        return 0.0
    return float((hmax - h[vertex]) / (hmax - hmin))


def normalise_flatness(flatness: np.ndarray, percentile: float = FLATNESS_PERCENTILE) -> np.ndarray:
    if len(flatness) == 0:
        return flatness.copy()
    ref = float(np.percentile(flatness, percentile))
    if ref <= 0:
        return np.where(flatness > 0, 1.0, 0.0)
    return np.clip(flatness / ref, 0.0, 1.0)


def score_anchors(mesh: TriangleMesh, weights: ScoreWeights = ScoreWeights(),
                  radii: ScoreRadii = ScoreRadii(), up=(0.0, 0.0, 1.0)) -> AnchorSet:
    """One scored anchor per mesh vertex; anchor id = vertex index."""
    v = mesh.vertices
    flat = flatness_scores(v, radii.flatness)
    hr = height_risks(v, radii.height, up)
    r = weights.flatness * normalise_flatness(flat) + weights.height * hr
    return AnchorSet(np.arange(len(v)), v, mesh.vertex_normals(), flat, hr, r)


def cull(anchors: AnchorSet, keep_fraction: float | None = 0.15,
         threshold: float | None = None) -> AnchorSet:
    """Keep the safest anchors, sorted by ascending ``r`` then id.

    Fraction mode keeps ``ceil(keep_fraction * N)``; threshold mode keeps every
    anchor with ``r <= threshold``. If both are given both apply.
    """
    if keep_fraction is not None and not (0 < keep_fraction <= 1):
        raise ValueError("keep_fraction must be in (0, 1]")
    order = np.lexsort((anchors.ids, anchors.r))
    if threshold is not None:
        order = order[anchors.r[order] <= threshold]
    if keep_fraction is not None:
        order = order[: math.ceil(keep_fraction * len(anchors) - 1e-9)]
    return anchors.take(order)
