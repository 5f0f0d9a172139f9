"""Point-cloud ingestion, nearest-neighbour queries and normal recovery."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateNeighborhood, EmptyCloud, KTooLarge, ParseError

logger = logging.getLogger(__name__)

DEFAULT_K = 16
# (lambda_1 - lambda_0) <= DEGENERATE_RTOL * lambda_2 marks a neighbourhood with
# no unique least-squares plane (collinear or coincident points).
DEGENERATE_RTOL = 1e-12

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _origin(value) -> np.ndarray:
    if value is None:
        return np.zeros(3)
    return np.asarray(value, dtype=float).reshape(3)


@dataclass
class PointCloud:
    """Raw scan points, shape (N, 3), plus the pose they were taken from."""

    points: np.ndarray
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.sensor_origin = _origin(self.sensor_origin)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self):
        return len(self.points)


@dataclass
class OrientedCloud:
    """Points with unit normals facing the sensor.

    ``source_ids`` maps each row back to the cloud it was estimated from and
    ``degenerate`` lists the input ids that were dropped for having no
    well-defined plane.
    """

    positions: np.ndarray
    normals: np.ndarray
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source_ids: np.ndarray | None = None
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.normals.shape:
            raise ValueError("positions and normals differ in shape")
        self.sensor_origin = _origin(self.sensor_origin)
        if self.source_ids is None:
            self.source_ids = np.arange(len(self.positions))
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)
        self.degenerate = np.asarray(self.degenerate, dtype=np.int64)

    def __len__(self):
        return len(self.positions)


class SpatialIndex:
    """k-d tree over a fixed point set.

    Query results are the same as a linear scan sorted by (distance, id).
    """

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyCloud("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def _exact(self, query, ids):
        d = np.sqrt(((self.points[ids] - query) ** 2).sum(axis=-1))
        return d

    def knn(self, query, k: int) -> list[tuple[int, float]]:
        q = np.asarray(query, dtype=float).reshape(3)
        n = len(self.points)
        if k > n:
            raise KTooLarge(f"k={k} exceeds cloud size {n}")
        if k <= 0:
            return []
        dk, _ = self._tree.query(q, k=k)
        radius = float(np.max(dk))
        cand = np.asarray(self._tree.query_ball_point(q, radius * (1 + 1e-9) + 1e-12), dtype=np.int64)
        d = self._exact(q, cand)
        order = np.lexsort((cand, d))[:k]
        return [(int(cand[i]), float(d[i])) for i in order]

    def knn_batch(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`knn` over many queries; returns (ids, distances)."""
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if k > n:
            raise KTooLarge(f"k={k} exceeds cloud size {n}")
        m = min(n, k + 4)
        _, ids = self._tree.query(q, k=m)
        ids = ids.reshape(len(q), m)
        d = np.sqrt(((self.points[ids] - q[:, None, :]) ** 2).sum(axis=-1))
        order = np.lexsort((ids, d), axis=-1)
        ids = np.take_along_axis(ids, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        out_ids, out_d = ids[:, :k].copy(), d[:, :k].copy()
        if m < n:
            # rows whose k-th distance reaches the search horizon may hide ties
            unsure = np.nonzero(d[:, k - 1] * (1 + 1e-9) + 1e-12 >= d[:, -1])[0]
            for row in unsure:
                res = self.knn(q[row], k)
                out_ids[row] = [i for i, _ in res]
                out_d[row] = [dist for _, dist in res]
        return out_ids, out_d

    def radius(self, query, r: float) -> np.ndarray:
        ids = self._tree.query_ball_point(np.asarray(query, dtype=float).reshape(3), r)
        return np.sort(np.asarray(ids, dtype=np.int64))


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(pts)


def knn(index: SpatialIndex, query, k: int) -> list[tuple[int, float]]:
    """The ``k`` nearest points to ``query`` as ``(id, distance)`` pairs, ties to lower id."""
    return index.knn(query, k)


# ---------------------------------------------------------------------------
# Normal recovery
# ---------------------------------------------------------------------------

def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K) -> OrientedCloud:
    """Least-squares plane normal over each point and its ``k`` nearest neighbours.

    Normals are flipped toward ``cloud.sensor_origin``. Points whose
    neighbourhood has no unique plane are reported in ``degenerate`` and left
    out of the result.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("no points")
    if n < k + 1:
        raise KTooLarge(f"need at least k+1={k + 1} points, got {n}")

    index = SpatialIndex(cloud.points)
    ids, _ = index.knn_batch(cloud.points, k + 1)
    own = np.arange(n)
    # drop the point itself (or, if duplicates pushed it out, the farthest)
    is_self = ids == own[:, None]
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(ids, dtype=bool)
    keep[own, drop] = False
    neigh = ids[keep].reshape(n, k)
    hood = np.concatenate([own[:, None], neigh], axis=1)

    pts = cloud.points[hood]
    centred = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]

    degenerate = (evals[:, 1] - evals[:, 0]) <= DEGENERATE_RTOL * evals[:, 2]
    degenerate |= evals[:, 2] <= 0

    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    towards = cloud.sensor_origin - cloud.points
    flip = np.einsum("ij,ij->i", normals, towards) < 0
    normals[flip] *= -1

    good = ~degenerate
    bad_ids = np.nonzero(degenerate)[0]
    if bad_ids.size:
        logger.info("%d of %d vertices have degenerate neighbourhoods", bad_ids.size, n)
    if not good.any():
        raise DegenerateNeighborhood("every neighbourhood is rank deficient", bad_ids)
    return OrientedCloud(
        positions=cloud.points[good],
        normals=normals[good],
        sensor_origin=cloud.sensor_origin,
        source_ids=np.nonzero(good)[0],
        degenerate=bad_ids,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _detect_format(path: Path, fmt):
    if fmt:
        return fmt.lower()
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("xyz", "txt", "pts"):
        return "xyz"
    if suffix == "ply":
        return "ply"
    raise ParseError(f"cannot infer cloud format from suffix '{path.suffix}'", path=path)


def _parse_floats(tokens, lineno, path):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric record {' '.join(tokens)!r}", lineno, path) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(f"non-finite coordinate in {' '.join(tokens)!r}", lineno, path)
    return vals


def _read_xyz(path: Path):
    pts, nrm = [], []
    origin = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                words = line[1:].split()
                if words and words[0] == "sensor_origin":
                    if len(words) != 4:
                        raise ParseError("sensor_origin needs three values", lineno, path)
                    origin = _parse_floats(words[1:], lineno, path)
                continue
            tokens = line.split("#", 1)[0].split()
            if len(tokens) not in (3, 6):
                raise ParseError(f"expected 3 (or 6) values, got {len(tokens)}", lineno, path)
            vals = _parse_floats(tokens, lineno, path)
            pts.append(vals[:3])
            if len(vals) == 6:
                nrm.append(vals[3:])
    if nrm and len(nrm) != len(pts):
        raise ParseError("normals given for some records but not all", path=path)
    return np.array(pts, dtype=float).reshape(-1, 3), (np.array(nrm, dtype=float) if nrm else None), origin


def _read_ply(path: Path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("missing ply magic or end_header", 1, path)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    header = data[:body_start].decode("ascii", errors="replace").splitlines()

    fmt = None
    origin = None
    elements = []  # (name, count, [(prop, dtype | None for list)])
    for lineno, line in enumerate(header, start=1):
        words = line.split()
        if not words or words[0] in ("ply", "end_header", "obj_info"):
            continue
        if words[0] == "format":
            fmt = words[1] if len(words) > 1 else None
        elif words[0] == "comment":
            if len(words) >= 2 and words[1] == "sensor_origin":
                if len(words) != 5:
                    raise ParseError("sensor_origin needs three values", lineno, path)
                origin = _parse_floats(words[2:], lineno, path)
        elif words[0] == "element":
            if len(words) != 3:
                raise ParseError("malformed element line", lineno, path)
            try:
                elements.append((words[1], int(words[2]), []))
            except ValueError:
                raise ParseError("element count is not an integer", lineno, path) from None
        elif words[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno, path)
            if len(words) >= 2 and words[1] == "list":
                elements[-1][2].append((words[-1], None))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise ParseError(f"unsupported property line {line!r}", lineno, path)
        else:
            raise ParseError(f"unknown header keyword {words[0]!r}", lineno, path)

    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported ply format {fmt!r}", path=path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise ParseError("no vertex element", path=path)
    vi = names.index("vertex")
    _, count, props = elements[vi]
    pnames = [p for p, _ in props]
    for axis in ("x", "y", "z"):
        if axis not in pnames:
            raise ParseError(f"vertex element lacks property {axis}", path=path)
    if any(dt is None for _, dt in props):
        raise ParseError("list properties on vertex are not supported", path=path)
    has_normals = all(a in pnames for a in ("nx", "ny", "nz"))

    if fmt == "ascii":
        lines = data[body_start:].decode("ascii", errors="replace").splitlines()
        skip = sum(e[1] for e in elements[:vi])
        first_line = len(header) + 1
        rows = []
        for i in range(count):
            idx = skip + i
            if idx >= len(lines):
                raise ParseError(f"expected {count} vertices, file ends early", first_line + idx, path)
            tokens = lines[idx].split()
            if len(tokens) != len(props):
                raise ParseError(f"expected {len(props)} values, got {len(tokens)}", first_line + idx, path)
            rows.append(_parse_floats(tokens, first_line + idx, path))
        table = np.array(rows, dtype=float).reshape(-1, len(props))
        col = {p: table[:, j] for j, p in enumerate(pnames)}
    else:
        offset = body_start
        for name, n, eprops in elements[:vi]:
            if any(dt is None for _, dt in eprops):
                raise ParseError(f"cannot skip list-valued element {name!r} before vertices", path=path)
            offset += n * np.dtype([(p, "<" + dt) for p, dt in eprops]).itemsize
        dtype = np.dtype([(p, "<" + dt) for p, dt in props])
        need = offset + count * dtype.itemsize
        if need > len(data):
            raise ParseError(f"binary body truncated: need {need} bytes, have {len(data)}", path=path)
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        col = {p: rec[p].astype(float) for p in pnames}
        bad = ~np.isfinite(np.stack([col["x"], col["y"], col["z"]], axis=1)).all(axis=1)
        if bad.any():
            raise ParseError(f"non-finite coordinate in vertex {int(np.argmax(bad))}", path=path)

    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    nrm = np.stack([col["nx"], col["ny"], col["nz"]], axis=1) if has_normals else None
    return pts, nrm, origin


def _read(path, fmt):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    kind = _detect_format(path, fmt)
    if kind == "xyz":
        return _read_xyz(path)
    if kind == "ply":
        return _read_ply(path)
    raise ParseError(f"unknown cloud format {kind!r}", path=path)


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read an XYZ or PLY cloud; sensor origin comes from the header or defaults to 0."""
    pts, _, origin = _read(path, fmt)
    if len(pts) == 0:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(pts, origin)


def load_oriented(path, fmt: str | None = None) -> OrientedCloud:
    pts, nrm, origin = _read(path, fmt)
    if len(pts) == 0:
        raise EmptyCloud(f"{path}: no points")
    if nrm is None:
        raise ParseError("cloud carries no normals (nx, ny, nz)", path=path)
    return OrientedCloud(pts, nrm, origin)


def _fmt(v) -> str:
    return repr(float(v))


def save_cloud(path, cloud: PointCloud | OrientedCloud, fmt: str | None = None) -> None:
    """Write ASCII PLY (default) or XYZ; normals are written for oriented clouds."""
    path = Path(path)
    kind = fmt or ("xyz" if path.suffix.lower() == ".xyz" else "ply")
    if isinstance(cloud, OrientedCloud):
        pts, nrm = cloud.positions, cloud.normals
    else:
        pts, nrm = cloud.points, None
    o = cloud.sensor_origin
    out = []
    if kind == "xyz":
        out.append(f"# sensor_origin {_fmt(o[0])} {_fmt(o[1])} {_fmt(o[2])}")
    else:
        out += ["ply", "format ascii 1.0",
                f"comment sensor_origin {_fmt(o[0])} {_fmt(o[1])} {_fmt(o[2])}",
                f"element vertex {len(pts)}",
                "property double x", "property double y", "property double z"]
        if nrm is not None:
            out += ["property double nx", "property double ny", "property double nz"]
        out.append("end_header")
    for i, p in enumerate(pts):
        vals = list(p) if nrm is None else list(p) + list(nrm[i])
        out.append(" ".join(_fmt(v) for v in vals))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
