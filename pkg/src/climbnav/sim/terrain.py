"""Ground-truth terrain meshes for the simulator.

The ground terrains are heightfields ``z = f(x, y)`` over a rectangle, world
``+x`` east and ``+y`` north, so the global grid's north-west corner sits at
``(x0, y1)``. The cliff and asteroid are test bodies for the pipeline. Trenches are carved as steep-walled depressions; a heightfield
cannot overhang, which is all the crevasse scenarios need.
"""

from __future__ import annotations

import math

import numpy as np

from ..mesh import TriangleMesh


def heightfield_mesh(heights: np.ndarray, x0: float, y0: float, spacing: float) -> TriangleMesh:
    """Triangulate a ``(ny, nx)`` height array sampled at ``(x0 + i*s, y0 + j*s)``."""
    h = np.asarray(heights, dtype=float)
    ny, nx = h.shape
    xs = x0 + spacing * np.arange(nx)
    ys = y0 + spacing * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel(), h.ravel()], axis=1)
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    # counter-clockwise seen from +z
    tris = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    return TriangleMesh(verts, tris)


def _grid(x_range, y_range, spacing):
    nx = int(round((x_range[1] - x_range[0]) / spacing)) + 1
    ny = int(round((y_range[1] - y_range[0]) / spacing)) + 1
    xs = x_range[0] + spacing * np.arange(nx)
    ys = y_range[0] + spacing * np.arange(ny)
    return np.meshgrid(xs, ys)


def flat_terrain(x_range=(0.0, 11.2), y_range=(-11.2, 0.0), spacing: float = 0.25,
                 z: float = 0.0) -> TriangleMesh:
    X, _ = _grid(x_range, y_range, spacing)
    return heightfield_mesh(np.full(X.shape, z), x_range[0], y_range[0], spacing)


def rough_heights(X, Y, seed: int, amplitude: float = 0.3, n_bumps: int = 40) -> np.ndarray:
    """Smooth seeded relief: a few long waves plus scattered Gaussian boulders."""
    rng = np.random.default_rng(seed)
    z = np.zeros_like(X)
    for _ in range(4):
        kx, ky = rng.uniform(0.2, 0.8, 2)
        ph = rng.uniform(0, 2 * math.pi)
        z += amplitude * 0.5 * np.sin(kx * X + ky * Y + ph)
    xmin, xmax, ymin, ymax = X.min(), X.max(), Y.min(), Y.max()
    for _ in range(n_bumps):
        cx, cy = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
        s = rng.uniform(0.2, 0.8)
        z += rng.uniform(-1, 1) * amplitude * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * s * s))
    return z


def crag_terrain(seed: int = 7, x_range=(0.0, 12.0), y_range=(-12.0, 0.0),
                 spacing: float = 0.2) -> TriangleMesh:
    """Rolling rocky ground with boulders."""
    X, Y = _grid(x_range, y_range, spacing)
    return heightfield_mesh(rough_heights(X, Y, seed), x_range[0], y_range[0], spacing)


def cliff_terrain(seed: int = 3, width: float = 20.0, height: float = 20.0,
                  spacing: float = 0.1) -> TriangleMesh:
    """A steep rough face standing in the x-z plane: ``y = f(x, z)``, facing -y."""
    X, Z = _grid((0.0, width), (0.0, height), spacing)
    Y = rough_heights(X, Z, seed, amplitude=0.4, n_bumps=80)
    m = heightfield_mesh(Y, 0.0, 0.0, spacing)
    # heightfield axes (x, y, z) -> world (x, z, y); the swap is a reflection,
    # which turns the +z-facing winding into -y-facing
    return TriangleMesh(m.vertices[:, [0, 2, 1]], m.triangles)


def _trench(X, Y, heights, x_lim, y_lim, depth):
    inside = (X >= x_lim[0]) & (X <= x_lim[1]) & (Y >= y_lim[0]) & (Y <= y_lim[1])
    heights[inside] -= depth


def crevasse_terrain(cols: int = 3, rows: int = 5, cell_size: float = 5.6,
                     crevasse_col: int = 1, boundary_row: int = 3, width: float = 3.0,
                     depth: float = 8.0, spacing: float = 0.25, roughness: float = 0.0,
                     seed: int = 0) -> TriangleMesh:
    """Open ground with an east-west crevasse across one column.

    The trench is centred on the boundary between ``boundary_row - 1`` and
    ``boundary_row`` and spans column ``crevasse_col`` only, so a detour
    through the neighbouring column stays open.
    """
    X, Y = _grid((0.0, cols * cell_size), (-rows * cell_size, 0.0), spacing)
    h = rough_heights(X, Y, seed, amplitude=roughness) if roughness else np.zeros(X.shape)
    yb = -boundary_row * cell_size
    _trench(X, Y, h, (crevasse_col * cell_size, (crevasse_col + 1) * cell_size),
            (yb - width / 2, yb + width / 2), depth)
    return heightfield_mesh(h, 0.0, -rows * cell_size, spacing)


def box_canyon_terrain(cols: int = 3, rows: int = 3, cell_size: float = 5.6, cell=(1, 1),
                       width: float = 3.0, depth: float = 8.0, spacing: float = 0.25) -> TriangleMesh:
    """A moat along all four borders of one cell, leaving it an island."""
    X, Y = _grid((0.0, cols * cell_size), (-rows * cell_size, 0.0), spacing)
    h = np.zeros(X.shape)
    cx, cy = cell
    x0, x1 = cx * cell_size, (cx + 1) * cell_size
    y1, y0 = -cy * cell_size, -(cy + 1) * cell_size
    w = width / 2
    moat = (((X >= x0 - w) & (X <= x1 + w) & (Y >= y0 - w) & (Y <= y1 + w))
            & ~((X > x0 + w) & (X < x1 - w) & (Y > y0 + w) & (Y < y1 - w)))
    h[moat] -= depth
    return heightfield_mesh(h, 0.0, -rows * cell_size, spacing)


def lumpy_asteroid(radius: float = 250.0, subdivisions: int = 4, seed: int = 25143,
                   elongation=(1.0, 0.6, 0.45), lumpiness: float = 0.12) -> TriangleMesh:
    """Closed peanut-ish body for exercising OBJ ingest at asteroid scale.

    An icosphere is stretched along three axes and its radius modulated by a
    few seeded low-order bumps.
    """
    t = (1 + math.sqrt(5)) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9],
                  [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2],
                  [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10],
                  [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        mids = v[uniq].sum(axis=1)
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = len(v) + inv.reshape(3, -1)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[0], m[1], m[2]
        f = np.concatenate([np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
                            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
        v = np.concatenate([v, mids])
    rng = np.random.default_rng(seed)
    scale = np.ones(len(v))
    for _ in range(6):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        scale += lumpiness * rng.uniform(0.5, 1.0) * np.exp(-4 * (1 - v @ d))
    v = v * scale[:, None] * np.asarray(elongation) * radius
    return TriangleMesh(v, f)
