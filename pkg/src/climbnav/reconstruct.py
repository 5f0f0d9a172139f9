"""Poisson surface reconstruction on a regular grid.

Oriented points are splatted into a vector field ``V``; the indicator ``chi``
is the least-squares fit of ``grad chi ~ V`` (``-lap chi = -div V`` with natural
boundary conditions), optionally screened toward 1 at the samples. The
surface is the marching-cubes isosurface of ``chi`` at its mean sample value.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft
from scipy.spatial import cKDTree

from ._mc_table import TRIANGLE_TABLE
from .errors import DegenerateBounds, EmptySurface, NoConvergence
from .geometry import OrientedCloud
from .mesh import TriangleMesh

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 128
DEFAULT_TOL = 1e-6
# screening weight is SCREENING_SCALE / spacing unless given explicitly
SCREENING_SCALE = 4.0
# the DCT preconditioner inverts -lap + PRECOND_SHIFT * mean(W); screening is
# concentrated on the few sample nodes, so a small fraction of its mean works best
PRECOND_SHIFT = 0.05


@dataclass
class ScalarGrid:
    dims: tuple[int, int, int]  # cell counts; values live on the (n+1)^3 nodes
    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.spacing = float(self.spacing)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(d + 1 for d in self.dims):
            raise ValueError(f"values shape {self.values.shape} does not match dims {self.dims}")

    @property
    def shape(self):
        return self.values.shape

    def node_coords(self):
        """Three 1-D coordinate arrays for the node lattice."""
        return [self.origin[a] + self.spacing * np.arange(self.dims[a] + 1) for a in range(3)]

    def sample(self, points) -> np.ndarray:
        """Trilinear interpolation at arbitrary points (clamped to the grid)."""
        idx, w = _trilinear(np.asarray(points, dtype=float).reshape(-1, 3), self.origin, self.spacing, self.dims)
        flat = self.values.ravel()
        return (flat[idx] * w).sum(axis=1)


@dataclass
class VectorGrid:
    dims: tuple[int, int, int]
    origin: np.ndarray
    spacing: float
    values: np.ndarray   # (nx+1, ny+1, nz+1, 3)
    density: np.ndarray  # summed splat weight per node; > 0 marks sample-adjacent nodes

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.spacing = float(self.spacing)
        self.values = np.asarray(self.values, dtype=float)
        self.density = np.asarray(self.density, dtype=float)


@dataclass
class Reconstruction:
    mesh: TriangleMesh
    grid: ScalarGrid
    isovalue: float


# ---------------------------------------------------------------------------
# splatting
# ---------------------------------------------------------------------------

def _trilinear(points, origin, spacing, dims):
    """Flat node indices (M, 8) and weights (M, 8) of each point's cell corners."""
    dims = np.asarray(dims)
    u = (points - origin) / spacing
    i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 1)
    t = np.clip(u - i0, 0.0, 1.0)
    strides = np.array([(dims[1] + 1) * (dims[2] + 1), dims[2] + 1, 1])
    idx = np.empty((len(points), 8), dtype=np.int64)
    w = np.empty((len(points), 8))
    c = 0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                off = np.array([dx, dy, dz])
                idx[:, c] = (i0 + off) @ strides
                w[:, c] = (np.where(dx, t[:, 0], 1 - t[:, 0])
                           * np.where(dy, t[:, 1], 1 - t[:, 1])
                           * np.where(dz, t[:, 2], 1 - t[:, 2]))
                c += 1
    return idx, w


def grid_dims(positions, resolution: int = DEFAULT_RESOLUTION, padding: float | None = None):
    """Cell counts giving ``resolution`` cells along the longest padded axis.

    With ``padding=None`` four cells of margin are left on every side.
    Returns ``(dims, padding)``.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    extent = pts.max(axis=0) - pts.min(axis=0)
    longest = float(extent.max())
    if padding is None:
        if longest <= 0:
            raise DegenerateBounds("cloud has zero extent")
        padding = 4.0 * longest / max(resolution - 8, 1)
    padded = extent + 2 * padding
    if padded.max() <= 0:
        raise DegenerateBounds("cloud has zero extent")
    h = padded.max() / resolution
    dims = tuple(max(8, int(math.ceil(e / h - 1e-9))) for e in padded)
    return dims, padding


def splat_normals(points: OrientedCloud, dims, padding: float) -> VectorGrid:
    """Distribute every normal over its 8 surrounding nodes with trilinear weights."""
    dims = tuple(int(d) for d in np.broadcast_to(np.asarray(dims), (3,)))
    if min(dims) < 8:
        raise ValueError("every grid dimension needs at least 8 cells")
    pos = points.positions
    if len(pos) == 0:
        raise DegenerateBounds("no points to splat")
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    extent = hi - lo + 2 * padding
    if np.any(extent <= 0) or not np.all(np.isfinite(extent)):
        raise DegenerateBounds(f"padded bounds have zero extent: {extent}")
    spacing = float(np.max(extent / np.asarray(dims)))
    centre = (lo + hi) / 2
    origin = centre - spacing * np.asarray(dims) / 2

    idx, w = _trilinear(pos, origin, spacing, dims)
    n_nodes = int(np.prod([d + 1 for d in dims]))
    shape = tuple(d + 1 for d in dims)
    flat_idx = idx.ravel()
    values = np.empty(shape + (3,))
    for a in range(3):
        contrib = (w * points.normals[:, a:a + 1]).ravel()
        values[..., a] = np.bincount(flat_idx, weights=contrib, minlength=n_nodes).reshape(shape)
    density = np.bincount(flat_idx, weights=w.ravel(), minlength=n_nodes).reshape(shape)
    return VectorGrid(dims, origin, spacing, values, density)


# ---------------------------------------------------------------------------
# Poisson solve
# ---------------------------------------------------------------------------

def neg_laplacian(chi: np.ndarray, spacing: float) -> np.ndarray:
    """7-point ``-lap`` with zero-flux boundaries (``G^T G`` of forward differences)."""
    out = np.zeros_like(chi)
    for a in range(chi.ndim):
        d = np.diff(chi, axis=a)
        lo = [slice(None)] * chi.ndim
        hi = [slice(None)] * chi.ndim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        out[tuple(lo)] -= d
        out[tuple(hi)] += d
    return out / spacing ** 2


def neg_divergence(v: np.ndarray, spacing: float) -> np.ndarray:
    """Central-difference ``-div V`` in the adjoint form that pairs with :func:`neg_laplacian`."""
    out = np.zeros(v.shape[:3])
    for a in range(3):
        comp = v[..., a]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        edge = 0.5 * (comp[tuple(lo)] + comp[tuple(hi)])
        out[tuple(lo)] -= edge
        out[tuple(hi)] += edge
    return out / spacing


class _FastPoisson:
    """Exact inverse of ``-lap + shift`` on the grid via the type-II DCT."""

    def __init__(self, shape, spacing, shift=0.0):
        lam = 0.0
        for a, n in enumerate(shape):
            k = np.arange(n)
            ev = (2.0 - 2.0 * np.cos(np.pi * k / n)) / spacing ** 2
            sh = [1] * len(shape)
            sh[a] = n
            lam = lam + ev.reshape(sh)
        lam = lam + shift
        with np.errstate(divide="ignore"):
            inv = np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
        self.inv = inv

    def __call__(self, r):
        return fft.idctn(fft.dctn(r, type=2, norm="ortho") * self.inv, type=2, norm="ortho")


def poisson_residual(chi: ScalarGrid, v: VectorGrid, screening: float) -> float:
    """Relative residual of the (screened) system for an already-solved grid."""
    h = v.spacing
    w = screening * v.density
    lhs = neg_laplacian(chi.values, h) + w * chi.values
    rhs = neg_divergence(v.values, h) + w
    nb = np.linalg.norm(rhs)
    return float(np.linalg.norm(lhs - rhs) / nb) if nb > 0 else float(np.linalg.norm(lhs))


def solve_poisson(v: VectorGrid, screening: float | None = None, tol: float = DEFAULT_TOL,
                  max_iter: int | None = None) -> ScalarGrid:
    """Solve ``-lap chi + W (chi - 1) = -div V`` by preconditioned conjugate gradients.

    ``W`` is ``screening`` times the splat weight at each node, so only
    nodes touched by a sample are screened. ``screening=None`` uses
    ``4 / spacing``; with ``screening=0`` the nullspace is removed by
    pinning ``mean(chi) = 0``.
    """
    if not np.all(np.isfinite(v.values)):
        raise ValueError("vector field is not finite")
    h = v.spacing
    if screening is None:
        screening = SCREENING_SCALE / h
    if screening < 0:
        raise ValueError("screening weight must be non-negative")
    shape = v.values.shape[:3]
    n = int(np.prod(shape))
    if max_iter is None:
        max_iter = 10 * n

    w = screening * v.density
    b = neg_divergence(v.values, h) + w
    if screening == 0:
        b -= b.mean()
    nb = np.linalg.norm(b)
    if nb == 0:
        return ScalarGrid(v.dims, v.origin, h, np.zeros(shape))

    def apply(x):
        return neg_laplacian(x, h) + w * x

    shift = PRECOND_SHIFT * float(w.sum() / n)
    precond = _FastPoisson(shape, h, shift)

    x = precond(b)
    r = b - apply(x)
    if screening == 0:
        r -= r.mean()
    z = precond(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = np.linalg.norm(r) / nb
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NoConvergence("Poisson solve hit its iteration cap", res, it)
        ap = apply(p)
        alpha = rz / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        if screening == 0:
            r -= r.mean()
        it += 1
        if it % 50 == 0:  # refresh against drift
            r = b - apply(x)
            if screening == 0:
                r -= r.mean()
        res = np.linalg.norm(r) / nb
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    if screening == 0:
        x -= x.mean()
    logger.debug("poisson: %d PCG iterations, residual %.2e", it, res)
    return ScalarGrid(v.dims, v.origin, h, x)


def choose_isovalue(grid: ScalarGrid, points: OrientedCloud) -> float:
    """Mean of the interpolated indicator over the input samples."""
    return float(np.mean(grid.sample(points.positions)))


# ---------------------------------------------------------------------------
# marching cubes
# ---------------------------------------------------------------------------

_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
])
# local edge -> (axis, offset of its lower endpoint within the cube)
_EDGES = [
    (0, (0, 0, 0)), (1, (1, 0, 0)), (0, (0, 1, 0)), (1, (0, 0, 0)),
    (0, (0, 0, 1)), (1, (1, 0, 1)), (0, (0, 1, 1)), (1, (0, 0, 1)),
    (2, (0, 0, 0)), (2, (1, 0, 0)), (2, (1, 1, 0)), (2, (0, 1, 0)),
]
_TABLE = np.full((256, 15), -1, dtype=np.int64)
for _case, _row in enumerate(TRIANGLE_TABLE):
    _TABLE[_case, :len(_row)] = _row


def extract_isosurface(grid: ScalarGrid, iso: float) -> TriangleMesh:
    """Marching-cubes surface at ``iso``; triangles wind counter-clockwise toward higher values.

    One vertex is created per crossed grid edge and shared by every cube
    around that edge. Triangles are ordered by cube (C order) then by table
    slot, so output is deterministic.
    """
    f = grid.values
    if not (f.min() < iso < f.max()):
        raise EmptySurface(f"isovalue {iso} outside field range [{f.min()}, {f.max()}]")
    below = f < iso
    shape = f.shape
    h = grid.spacing

    vert_chunks = []
    vid = []
    count = 0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        cross = below[tuple(lo)] != below[tuple(hi)]
        ids = np.full(cross.shape, -1, dtype=np.int64)
        where = np.nonzero(cross)
        m = len(where[0])
        ids[where] = np.arange(count, count + m)
        count += m
        fa = f[tuple(lo)][where]
        fb = f[tuple(hi)][where]
        t = (iso - fa) / (fb - fa)
        node = np.stack(where, axis=1).astype(float)
        node[:, axis] += t
        vert_chunks.append(grid.origin + h * node)
        vid.append(ids)
    verts = np.concatenate(vert_chunks)

    cx, cy, cz = (s - 1 for s in shape)
    case = np.zeros((cx, cy, cz), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        case |= below[dx:dx + cx, dy:dy + cy, dz:dz + cz].astype(np.int64) << bit
    active = np.nonzero((case != 0) & (case != 255))
    rows = _TABLE[case[active]]

    edge_vid = np.empty((len(rows), 12), dtype=np.int64)
    ci, cj, ck = active
    for e, (axis, (dx, dy, dz)) in enumerate(_EDGES):
        edge_vid[:, e] = vid[axis][ci + dx, cj + dy, ck + dz]
    tri = np.take_along_axis(edge_vid, np.maximum(rows, 0), axis=1).reshape(-1, 5, 3)
    valid = rows.reshape(-1, 5, 3)[:, :, 0] >= 0
    tri = tri[valid]
    if np.any(tri < 0):
        raise RuntimeError("marching cubes referenced an uncrossed edge")
    # the table winds triangles toward the below-iso side; flip to face increasing values
    tri = tri[:, ::-1]
    return TriangleMesh(verts, tri).compact()


def trim_to_samples(mesh: TriangleMesh, positions, max_distance: float) -> TriangleMesh:
    """Drop mesh vertices farther than ``max_distance`` from every sample."""
    if mesh.n_vertices == 0:
        return mesh
    d, _ = cKDTree(np.asarray(positions, dtype=float)).query(mesh.vertices)
    return mesh.subset_vertices(d <= max_distance).compact()


def reconstruct_surface(points: OrientedCloud, resolution: int = DEFAULT_RESOLUTION,
                        padding: float | None = None, screening: float | None = None,
                        tol: float = DEFAULT_TOL, trim_distance: float | None = None) -> Reconstruction:
    """Splat, solve, pick the isovalue and extract, in one call."""
    dims, padding = grid_dims(points.positions, resolution, padding)
    field = splat_normals(points, dims, padding)
    chi = solve_poisson(field, screening=screening, tol=tol)
    iso = choose_isovalue(chi, points)
    mesh = extract_isosurface(chi, iso)
    if trim_distance is not None:
        mesh = trim_to_samples(mesh, points.positions, trim_distance)
    return Reconstruction(mesh, chi, iso)


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------

def save_grid(path, grid: ScalarGrid) -> Path:
    """Raw little-endian float64 values (C order, z fastest) plus a JSON header beside them."""
    path = Path(path)
    grid.values.astype("<f8").tofile(path)
    header = {
        "dims": list(grid.dims),
        "nodes": list(grid.values.shape),
        "origin": [float(v) for v in grid.origin],
        "spacing": grid.spacing,
        "dtype": "<f8",
        "order": "C",
    }
    hdr = path.with_name(path.name + ".json")
    hdr.write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")
    return hdr


def load_grid(path) -> ScalarGrid:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text(encoding="utf-8"))
    values = np.fromfile(path, dtype=header["dtype"]).reshape(header["nodes"])
    return ScalarGrid(tuple(header["dims"]), header["origin"], header["spacing"], values.astype(float))
