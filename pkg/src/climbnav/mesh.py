"""Triangle meshes: container, topology checks and OBJ I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError


@dataclass
class TriangleMesh:
    vertices: np.ndarray   # (N, 3) float
    triangles: np.ndarray  # (M, 3) int, counter-clockwise seen from outside

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle references a missing vertex")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges (sorted pairs) and how many triangles use each."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def is_closed(self) -> bool:
        if self.n_triangles == 0:
            return False
        _, counts = self.edges()
        return bool(np.all(counts == 2))

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        uniq, _ = self.edges()
        return int(len(used) - len(uniq) + self.n_triangles)

    def face_normals(self) -> np.ndarray:
        """Unnormalised face normals (length = twice the triangle area)."""
        v = self.vertices[self.triangles]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals; isolated vertices get +z."""
        fn = self.face_normals()
        vn = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(vn, self.triangles[:, c], fn)
        norm = np.linalg.norm(vn, axis=1)
        out = np.tile([0.0, 0.0, 1.0], (len(vn), 1))
        ok = norm > 0
        out[ok] = vn[ok] / norm[ok, None]
        return out

    def translated(self, offset) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles.copy())

    def scaled(self, factors) -> "TriangleMesh":
        """Per-axis affine scale about the origin (flips winding for odd reflections)."""
        f = np.broadcast_to(np.asarray(factors, dtype=float), (3,))
        tris = self.triangles.copy()
        if np.prod(np.sign(f)) < 0:
            tris = tris[:, ::-1]
        return TriangleMesh(self.vertices * f, tris)

    def compact(self) -> "TriangleMesh":
        """Drop unreferenced vertices, renumbering triangles."""
        used = np.unique(self.triangles)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.vertices[used], remap[self.triangles])

    def subset_vertices(self, keep: np.ndarray) -> "TriangleMesh":
        """Keep only the masked vertices and the triangles made entirely of them."""
        keep = np.asarray(keep, dtype=bool)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        tri = remap[self.triangles] if self.n_triangles else self.triangles
        tri = tri[(tri >= 0).all(axis=1)] if self.n_triangles else tri
        return TriangleMesh(self.vertices[keep], tri)


def _fmt(v) -> str:
    return repr(float(v))


def save_obj(path, mesh: TriangleMesh, header: str | None = None) -> None:
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_obj(path) -> TriangleMesh:
    """Read vertices and faces from an OBJ file; polygons are fan-triangulated."""
    path = Path(path)
    verts, tris = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            words = raw.split("#", 1)[0].split()
            if not words:
                continue
            if words[0] == "v":
                if len(words) < 4:
                    raise ParseError("vertex needs three coordinates", lineno, path)
                try:
                    xyz = [float(w) for w in words[1:4]]
                except ValueError:
                    raise ParseError("non-numeric vertex", lineno, path) from None
                if not np.all(np.isfinite(xyz)):
                    raise ParseError("non-finite vertex", lineno, path)
                verts.append(xyz)
            elif words[0] == "f":
                try:
                    idx = [int(w.split("/")[0]) for w in words[1:]]
                except ValueError:
                    raise ParseError("malformed face", lineno, path) from None
                if len(idx) < 3:
                    raise ParseError("face needs at least three vertices", lineno, path)
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if min(idx) < 0 or max(idx) >= len(verts):
                    raise ParseError("face references an undefined vertex", lineno, path)
                for j in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[j], idx[j + 1]))
    if not verts:
        raise ParseError("no vertices", path=path)
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3))
