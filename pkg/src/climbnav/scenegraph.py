"""Directed anchor graph with (distance, loss) edge weights.

An edge a -> b carries ``d`` = |b - a| and ``loss = L_base + r_b``, the risk of
the anchor being hopped onto plus a per-edge base cost (0 by default).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .anchors import AnchorSet
from .errors import NoEdges

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEGREE = 16


@dataclass(frozen=True)
class SceneEdge:
    source: int
    target: int
    d: float
    loss: float


@dataclass
class SceneGraph:
    """Anchors plus edge arrays sorted by (source, target) vertex id."""

    vertices: AnchorSet
    src: np.ndarray   # anchor ids
    dst: np.ndarray
    d: np.ndarray
    loss: np.ndarray
    _row: dict = field(init=False, repr=False)
    _adj: dict | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        self.loss = np.asarray(self.loss, dtype=float).reshape(-1)
        if not (len(self.src) == len(self.dst) == len(self.d) == len(self.loss)):
            raise ValueError("edge arrays differ in length")
        self._row = {int(i): k for k, i in enumerate(self.vertices.ids)}
        if len(self.src):
            order = np.lexsort((self.dst, self.src))
            self.src, self.dst = self.src[order], self.dst[order]
            self.d, self.loss = self.d[order], self.loss[order]

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def disconnected(self) -> bool:
        return self.n_edges == 0

    def __contains__(self, anchor_id) -> bool:
        return int(anchor_id) in self._row

    def row(self, anchor_id) -> int:
        return self._row[int(anchor_id)]

    def position(self, anchor_id) -> np.ndarray:
        return self.vertices.positions[self._row[int(anchor_id)]]

    def score(self, anchor_id) -> float:
        return float(self.vertices.r[self._row[int(anchor_id)]])

    def edges(self):
        for s, t, d, l in zip(self.src, self.dst, self.d, self.loss):
            yield SceneEdge(int(s), int(t), float(d), float(l))

    def adjacency(self) -> dict[int, list[tuple[int, float, float]]]:
        """``{source: [(target, d, loss), ...]}`` with targets ascending; cached."""
        if self._adj is None:
            adj = {int(i): [] for i in self.vertices.ids}
            for s, t, d, l in zip(self.src.tolist(), self.dst.tolist(), self.d.tolist(), self.loss.tolist()):
                adj[s].append((t, d, l))
            self._adj = adj
        return self._adj

    def edge_mask(self, mask) -> "SceneGraph":
        return SceneGraph(self.vertices, self.src[mask], self.dst[mask], self.d[mask], self.loss[mask])


def build_graph(anchors: AnchorSet, neighbor_radius: float, base_loss: float = 0.0,
                max_degree: int | None = DEFAULT_MAX_DEGREE) -> SceneGraph:
    """Connect every ordered pair of anchors closer than ``neighbor_radius``.

    With ``max_degree`` set, a pair is kept only if each endpoint is among
    the other's ``max_degree`` nearest anchors, so edges stay paired in both
    directions and no vertex exceeds the cap.
    """
    n = len(anchors)
    if n < 2:
        raise ValueError("a scene graph needs at least two anchors")
    pos = anchors.positions
    tree = cKDTree(pos)
    pairs = tree.query_pairs(neighbor_radius * (1 + 1e-9), output_type="ndarray")
    if len(pairs):
        diff = pos[pairs[:, 1]] - pos[pairs[:, 0]]
        dist = np.sqrt((diff ** 2).sum(axis=1))
        keep = dist > 0
        pairs, dist = pairs[keep], dist[keep]
    else:
        dist = np.zeros(0)

    if max_degree is not None and len(pairs):
        # rank of each pair inside both endpoints' neighbour lists (distance, then id)
        a = np.concatenate([pairs[:, 0], pairs[:, 1]])
        b = np.concatenate([pairs[:, 1], pairs[:, 0]])
        dd = np.concatenate([dist, dist])
        order = np.lexsort((anchors.ids[b], dd, a))
        a_sorted = a[order]
        starts = np.searchsorted(a_sorted, a_sorted, side="left")
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order)) - starts
        m = len(pairs)
        ok = (rank[:m] < max_degree) & (rank[m:] < max_degree)
        pairs, dist = pairs[ok], dist[ok]

    if len(pairs):
        # recompute survivors with math.dist, which is what plans report for hops
        dist = np.fromiter(map(math.dist, pos[pairs[:, 0]].tolist(), pos[pairs[:, 1]].tolist()),
                           dtype=float, count=len(pairs))
        ok = dist <= neighbor_radius
        pairs, dist = pairs[ok], dist[ok]

    i = np.concatenate([pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.zeros(0, dtype=np.int64)
    j = np.concatenate([pairs[:, 1], pairs[:, 0]]) if len(pairs) else np.zeros(0, dtype=np.int64)
    d = np.concatenate([dist, dist]) if len(pairs) else np.zeros(0)
    loss = base_loss + anchors.r[j]
    graph = SceneGraph(anchors, anchors.ids[i], anchors.ids[j], d, loss)
    if graph.disconnected:
        warnings.warn(NoEdges(f"no anchor pairs within {neighbor_radius} m"), stacklevel=2)
    return graph


def prune_by_hop(graph: SceneGraph, h_max: float) -> SceneGraph:
    """Drop edges longer than ``h_max``; vertices are all kept."""
    if math.isinf(h_max):
        return graph.edge_mask(np.ones(graph.n_edges, dtype=bool))
    return graph.edge_mask(graph.d <= h_max)
