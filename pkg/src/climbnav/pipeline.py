"""Scan-to-graph composition used by both the CLI and the mission loop."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .anchors import AnchorSet, cull, score_anchors
from .config import PipelineConfig
from .errors import NoEdges
from .geometry import OrientedCloud, PointCloud, estimate_normals
from .reconstruct import Reconstruction, reconstruct_surface
from .scenegraph import SceneGraph, build_graph


@dataclass
class Scene:
    oriented: OrientedCloud
    reconstruction: Reconstruction
    scored: AnchorSet
    anchors: AnchorSet


def reconstruct(oriented: OrientedCloud, cfg: PipelineConfig) -> Reconstruction:
    return reconstruct_surface(oriented, cfg.resolution, cfg.padding, cfg.screening,
                               cfg.solver_tol, cfg.trim_distance)


def score(rec: Reconstruction, cfg: PipelineConfig) -> AnchorSet:
    return score_anchors(rec.mesh, cfg.weights, cfg.radii, cfg.up)


def select(scored: AnchorSet, cfg: PipelineConfig) -> AnchorSet:
    return cull(scored, cfg.keep_fraction, cfg.threshold)


def graph(anchors: AnchorSet, cfg: PipelineConfig, quiet: bool = False) -> SceneGraph:
    with warnings.catch_warnings():
        if quiet:
            warnings.simplefilter("ignore", NoEdges)
        return build_graph(anchors, cfg.graph_radius, cfg.base_loss, cfg.max_degree)


def process_scan(cloud: PointCloud, cfg: PipelineConfig) -> Scene:
    """Normals, surface, scores and culling for one scan."""
    oriented = estimate_normals(cloud, cfg.k)
    rec = reconstruct(oriented, cfg)
    scored = score(rec, cfg)
    return Scene(oriented, rec, scored, select(scored, cfg))
