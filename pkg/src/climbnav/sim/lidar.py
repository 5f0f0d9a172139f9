"""Simulated scanning rangefinder: rays cast against a triangle mesh through a BVH."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import PointCloud
from ..mesh import TriangleMesh

LEAF_SIZE = 8
_EPS = 1e-12
# barycentric slack so rays through a shared edge or vertex cannot slip between triangles
_BARY_EPS = 1e-9


@dataclass(frozen=True)
class LidarConfig:
    """Scan pattern in world angles: azimuth about +z from +x, elevation from the x-y plane."""

    max_range: float = 5.6
    noise_sigma: float = 0.03
    azimuth_resolution: float = 0.02
    elevation_resolution: float = 0.02
    azimuth_min: float = -math.pi
    azimuth_max: float = math.pi
    elevation_min: float = -math.pi / 2
    elevation_max: float = math.pi / 2

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not (self.azimuth_resolution > 0 and self.elevation_resolution > 0):
            raise ValueError("angular resolutions must be positive")
        if self.azimuth_max <= self.azimuth_min or self.elevation_max <= self.elevation_min:
            raise ValueError("empty field of view")

    def directions(self) -> np.ndarray:
        """Unit ray directions, azimuth-major, one per angular step (cell centres)."""
        def steps(lo, hi, res):
            n = max(1, int(round((hi - lo) / res)))
            return lo + (np.arange(n) + 0.5) * ((hi - lo) / n)

        az = steps(self.azimuth_min, self.azimuth_max, self.azimuth_resolution)
        el = steps(self.elevation_min, self.elevation_max, self.elevation_resolution)
        A, E = np.meshgrid(az, el, indexing="ij")
        A, E = A.ravel(), E.ravel()
        return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=1)


class BVH:
    """Median-split bounding volume hierarchy over a mesh's triangles."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        tri = mesh.vertices[mesh.triangles]            # (M, 3, 3)
        order = np.arange(len(tri))
        cent = tri.mean(axis=1)
        lo_all, hi_all = tri.min(axis=1), tri.max(axis=1)
        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def new_node(idx):
            bmin.append(lo_all[idx].min(axis=0) if len(idx) else np.zeros(3))
            bmax.append(hi_all[idx].max(axis=0) if len(idx) else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(bmin) - 1

        leaves = []
        stack = [(new_node(order), order)]
        while stack:
            node, idx = stack.pop()
            if len(idx) <= leaf_size:
                leaves.append((node, idx))
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = len(idx) // 2
            part = np.argpartition(c[:, axis], mid)
            a, b = idx[part[:mid]], idx[part[mid:]]
            la, lb = new_node(a), new_node(b)
            left[node], right[node] = la, lb
            stack.append((lb, b))
            stack.append((la, a))
        perm = []
        for node, idx in leaves:
            start[node] = len(perm)
            count[node] = len(idx)
            perm.extend(idx.tolist())
        self.tri_index = np.asarray(perm, dtype=np.int64)
        t = tri[self.tri_index]
        self.v0 = t[:, 0]
        self.e1 = t[:, 1] - t[:, 0]
        self.e2 = t[:, 2] - t[:, 0]
        self.bmin = np.asarray(bmin).reshape(-1, 3)
        self.bmax = np.asarray(bmax).reshape(-1, 3)
        self.left = np.asarray(left)
        self.right = np.asarray(right)
        self.start = np.asarray(start)
        self.count = np.asarray(count)

    def __len__(self):
        return len(self.bmin)

    def intersect(self, origins, directions, t_max=math.inf) -> tuple[np.ndarray, np.ndarray]:
        """Nearest hit per ray: distances (inf on miss) and triangle ids (-1 on miss).

        Only hits with ``0 < t <= t_max`` count. Directions need not be unit
        length; distances are in units of the direction vector.
        """
        O = np.broadcast_to(np.asarray(origins, dtype=float), np.shape(directions)).reshape(-1, 3)
        D = np.asarray(directions, dtype=float).reshape(-1, 3)
        n = len(D)
        best = np.full(n, np.nextafter(t_max, math.inf) if math.isfinite(t_max) else math.inf)
        hit = np.full(n, -1, dtype=np.int64)
        if n == 0 or len(self.tri_index) == 0:
            return np.full(n, math.inf), hit
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / D
        stack = [(0, np.arange(n))]
        while stack:
            node, rays = stack.pop()
            o, iv = O[rays], inv[rays]
            with np.errstate(invalid="ignore"):
                t1 = (self.bmin[node] - o) * iv
                t2 = (self.bmax[node] - o) * iv
            # 0 * inf: a ray parallel to a slab with its origin on the face is inside it
            flat = np.isnan(t1) | np.isnan(t2)
            tnear = np.where(flat, -math.inf, np.fmin(t1, t2)).max(axis=1)
            tfar = np.where(flat, math.inf, np.fmax(t1, t2)).min(axis=1)
            ok = (tfar >= np.maximum(tnear, 0.0)) & (tnear <= best[rays])
            rays = rays[ok]
            if len(rays) == 0:
                continue
            if self.left[node] >= 0:
                stack.append((self.right[node], rays))
                stack.append((self.left[node], rays))
                continue
            s, c = self.start[node], self.count[node]
            t, k = self._moller_trumbore(O[rays], D[rays], slice(s, s + c))
            better = t < best[rays]
            upd = rays[better]
            best[upd] = t[better]
            hit[upd] = self.tri_index[s + k[better]]
        best[hit < 0] = math.inf
        return best, hit

    def _moller_trumbore(self, o, d, sl):
        """Nearest positive hit of each ray against a contiguous triangle block."""
        v0, e1, e2 = self.v0[sl].T, self.e1[sl].T, self.e2[sl].T   # (3, t)
        dx, dy, dz = (d[:, i, None] for i in range(3))              # (r, 1)
        # p = d x e2
        px = dy * e2[2] - dz * e2[1]
        py = dz * e2[0] - dx * e2[2]
        pz = dx * e2[1] - dy * e2[0]
        det = e1[0] * px + e1[1] * py + e1[2] * pz
        sx = o[:, 0, None] - v0[0]
        sy = o[:, 1, None] - v0[1]
        sz = o[:, 2, None] - v0[2]
        # q = s x e1
        qx = sy * e1[2] - sz * e1[1]
        qy = sz * e1[0] - sx * e1[2]
        qz = sx * e1[1] - sy * e1[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            u = (sx * px + sy * py + sz * pz) * inv_det
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv_det
            # parallel rays give inf - inf here; NaN fails every comparison
            valid = ((np.abs(det) > _EPS) & (u >= -_BARY_EPS) & (v >= -_BARY_EPS)
                     & (u + v <= 1 + _BARY_EPS) & (t > _EPS))
        t = np.where(valid, t, math.inf)
        k = np.argmin(t, axis=1)
        return t[np.arange(len(t)), k], k


def raycast(terrain: TriangleMesh | BVH, origin, directions, max_range: float = math.inf):
    bvh = terrain if isinstance(terrain, BVH) else BVH(terrain)
    return bvh.intersect(origin, directions, max_range)


def simulate_scan(terrain: TriangleMesh | BVH, pose, cfg: LidarConfig = LidarConfig(),
                  seed: int | np.random.Generator | None = 0) -> PointCloud:
    """One return per ray that hits within ``max_range``, with range noise along the ray.

    Points keep ray order. Pass a prebuilt :class:`BVH` to scan the same
    terrain repeatedly without rebuilding it.
    """
    origin = np.asarray(pose, dtype=float).reshape(3)
    dirs = cfg.directions()
    t, _ = raycast(terrain, origin, dirs, cfg.max_range)
    ok = np.isfinite(t)
    t, dirs = t[ok], dirs[ok]
    if cfg.noise_sigma > 0 and len(t):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        t = t + rng.normal(0.0, cfg.noise_sigma, len(t))
    return PointCloud(origin + t[:, None] * dirs, origin)
