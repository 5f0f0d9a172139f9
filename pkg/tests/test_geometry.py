import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from climbnav.errors import DegenerateNeighborhood, EmptyCloud, KTooLarge, ParseError
from climbnav.geometry import (PointCloud, build_index, estimate_normals, knn, load_cloud,
                               load_oriented, save_cloud)

from oracles import angle_deg, brute_knn, plane_normal


# -- loading -------------------------------------------------------------------------

def test_single_xyz_record(tmp_path):
    p = tmp_path / "one.xyz"
    p.write_text("1 2 3\n")
    cloud = load_cloud(p)
    assert cloud.points.tolist() == [[1.0, 2.0, 3.0]]


def test_nan_is_rejected_with_line_number(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("1 2 nan\n")
    with pytest.raises(ParseError) as err:
        load_cloud(p)
    assert err.value.line == 1


def test_xyz_comments_and_sensor_origin(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("# sensor_origin 0 0 5\n# a comment\n0 0 0\n1 0 0  # trailing\n\n")
    cloud = load_cloud(p)
    assert cloud.sensor_origin.tolist() == [0.0, 0.0, 5.0]
    assert len(cloud) == 2


def test_xyz_malformed_record(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\n1 2\n")
    with pytest.raises(ParseError) as err:
        load_cloud(p)
    assert err.value.line == 2


def test_empty_cloud(tmp_path):
    p = tmp_path / "e.xyz"
    p.write_text("# nothing\n")
    with pytest.raises(EmptyCloud):
        load_cloud(p)


def _binary_ply(path, pts, origin=None):
    header = ["ply", "format binary_little_endian 1.0"]
    if origin is not None:
        header.append("comment sensor_origin " + " ".join(str(v) for v in origin))
    header += [f"element vertex {len(pts)}", "property float x", "property float y",
               "property float z", "property uchar intensity", "end_header"]
    rec = np.zeros(len(pts), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("i", "u1")])
    rec["x"], rec["y"], rec["z"] = pts.T
    rec["i"] = 7
    path.write_bytes(("\n".join(header) + "\n").encode() + rec.tobytes())


def test_binary_ply_30k_lossless(tmp_path):
    pts = np.random.default_rng(0).normal(size=(30_500, 3)).astype(np.float32)
    p = tmp_path / "big.ply"
    _binary_ply(p, pts, origin=(1, 2, 3))
    cloud = load_cloud(p)
    assert len(cloud) == 30_500
    assert np.array_equal(cloud.points, pts.astype(float))
    assert cloud.sensor_origin.tolist() == [1.0, 2.0, 3.0]


def test_ascii_ply_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.normal(size=(200, 3)), (0.1, 0.2, 0.3))
    p = tmp_path / "a.ply"
    save_cloud(p, cloud)
    back = load_cloud(p)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.sensor_origin, cloud.sensor_origin)


def test_oriented_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    pts = np.c_[rng.uniform(-1, 1, (50, 2)), np.zeros(50)]
    oriented = estimate_normals(PointCloud(pts, (0, 0, 5)), 8)
    for name in ("o.ply", "o.xyz"):
        save_cloud(tmp_path / name, oriented)
        back = load_oriented(tmp_path / name)
        assert np.array_equal(back.positions, oriented.positions)
        assert np.array_equal(back.normals, oriented.normals)


def test_truncated_binary_ply(tmp_path):
    p = tmp_path / "t.ply"
    _binary_ply(p, np.zeros((10, 3), dtype=np.float32))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ParseError):
        load_cloud(p)


# -- nearest neighbours ----------------------------------------------------------------

def test_knn_line():
    idx = build_index(np.array([[i, 0, 0] for i in range(5)], dtype=float))
    assert [i for i, _ in knn(idx, (0, 0, 0), 2)] == [0, 1]


def test_knn_tie_goes_to_lower_id():
    idx = build_index(np.array([[1, 0, 0], [-1, 0, 0], [0, 0, 0]], dtype=float))
    res = knn(idx, (0, 0, 0), 3)
    assert [i for i, _ in res] == [2, 0, 1]


def test_knn_matches_brute_force_200_points():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, (200, 3))
    idx = build_index(pts)
    for q in rng.uniform(-1.2, 1.2, (50, 3)):
        got = knn(idx, q, 10)
        want = brute_knn(pts, q, 10)
        assert [i for i, _ in got] == [i for i, _ in want]
        assert np.allclose([d for _, d in got], [d for _, d in want], rtol=0, atol=1e-12)


def test_k_too_large():
    with pytest.raises(KTooLarge):
        knn(build_index(np.zeros((3, 3))), (0, 0, 0), 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.booleans())
def test_knn_property_vs_brute_force(seed, k, lattice):
    # lattice points force plenty of exact distance ties
    rng = np.random.default_rng(seed)
    n = int(rng.integers(k, 80))
    pts = rng.integers(-3, 4, (n, 3)).astype(float) if lattice else rng.normal(size=(n, 3))
    idx = build_index(pts)
    queries = rng.integers(-3, 4, (20, 3)).astype(float) if lattice else rng.normal(size=(20, 3))
    batch_ids, _ = idx.knn_batch(queries, k)
    for q, row in zip(queries, batch_ids):
        want = [i for i, _ in brute_knn(pts, q, k)]
        assert [i for i, _ in knn(idx, q, k)] == want
        assert row.tolist() == want


# -- normals ---------------------------------------------------------------------------

def test_exact_plane_normals():
    rng = np.random.default_rng(4)
    pts = np.c_[rng.uniform(-1, 1, (100, 2)), np.zeros(100)]
    out = estimate_normals(PointCloud(pts, (0, 0, 5)), 8)
    ang = np.arccos(np.clip(out.normals @ [0, 0, 1], -1, 1))
    assert ang.max() <= 1e-6


def test_sphere_normals_noise_free():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(2000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # sensor far outside; points facing away still orient toward it, so compare up to sign
    out = estimate_normals(PointCloud(v, (0, 0, 50)), 12)
    cos = np.abs(np.einsum("ij,ij->i", out.normals, out.positions))
    err = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    # a plane fit tilts toward the neighbourhood centroid on a curved surface,
    # so the bound holds for the mean; lopsided neighbourhoods reach several degrees
    assert err.mean() <= 2.0
    assert err.max() <= 10.0


def test_noisy_plane_normals_mean_error():
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        xy = rng.uniform(-2.8, 2.8, (2000, 2))
        pts = np.c_[xy, rng.normal(0, 0.03, 2000)]
        out = estimate_normals(PointCloud(pts, (0, 0, 1.5)), 16)
        errs.append(np.degrees(np.arccos(np.clip(out.normals @ [0, 0, 1], -1, 1))).mean())
    assert np.mean(errs) <= 10.0


def test_normals_match_svd_plane_fit():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(60, 3)) * [1, 1, 0.2]
    cloud = PointCloud(pts, (0, 0, 10))
    out = estimate_normals(cloud, 6)
    for i in range(0, 60, 7):
        hood = [j for j, _ in brute_knn(pts, pts[i], 7)]
        ref = plane_normal(pts[hood])
        assert min(angle_deg(out.normals[i], ref), angle_deg(out.normals[i], -ref)) < 1e-6


def test_degenerate_neighbourhoods_are_flagged():
    line = np.array([[i, 0, 0] for i in range(10)], dtype=float)
    with pytest.raises(DegenerateNeighborhood) as err:
        estimate_normals(PointCloud(line, (0, 0, 1)), 4)
    assert sorted(err.value.vertex_ids) == list(range(10))

    rng = np.random.default_rng(7)
    blob = rng.normal(size=(40, 3)) + [100, 0, 0]
    out = estimate_normals(PointCloud(np.vstack([line, blob]), (0, 0, 1)), 4)
    assert set(out.degenerate.tolist()) >= set(range(4))
    assert not set(out.source_ids.tolist()) & set(out.degenerate.tolist())


def test_k_bounds():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.zeros((5, 3))), 2)
    with pytest.raises(KTooLarge):
        estimate_normals(PointCloud(np.random.default_rng(0).normal(size=(5, 3))), 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normals_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(80, 3)) * [2, 1, 0.3]
    origin = np.array([0.3, -0.2, 6.0])
    rot = Rotation.random(random_state=int(seed % (2**31))).as_matrix()
    a = estimate_normals(PointCloud(pts, origin), 10)
    b = estimate_normals(PointCloud(pts @ rot.T, origin @ rot.T), 10)
    assert a.source_ids.tolist() == b.source_ids.tolist()
    rotated = a.normals @ rot.T
    cos = np.clip(np.einsum("ij,ij->i", rotated, b.normals), -1, 1)
    assert np.arccos(cos).max() <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 20))
def test_oriented_point_invariants(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(max(k + 1, 50), 3))
    origin = rng.normal(size=3) * 5
    out = estimate_normals(PointCloud(pts, origin), k)
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0, rtol=0, atol=1e-9)
    assert np.all(np.einsum("ij,ij->i", out.normals, origin - out.positions) >= 0)


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, math.nan]])
