import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climbnav.mesh import TriangleMesh
from climbnav.sim.lidar import BVH, LidarConfig, raycast, simulate_scan

from oracles import box_mesh, ray_hits_box, ray_triangle


def _wall(x, half):
    v = np.array([[x, -half, -half], [x, half, -half], [x, half, half], [x, -half, half]], dtype=float)
    return v, np.array([[0, 2, 1], [0, 3, 2]])


def _merge(*parts):
    verts, tris, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        tris.append(f + off)
        off += len(v)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def _forward(fov=0.6, res=0.02, noise=0.0, max_range=5.6):
    return LidarConfig(max_range, noise, res, res, -fov, fov, -fov, fov)


def test_plane_beyond_range_gives_nothing():
    terrain = _merge(_wall(6.0, 50.0))
    cloud = simulate_scan(terrain, (0, 0, 0), LidarConfig(noise_sigma=0.0))
    assert len(cloud) == 0
    assert cloud.sensor_origin.tolist() == [0.0, 0.0, 0.0]


def test_cube_face_hits_are_exact():
    terrain = _merge(box_mesh((2, -0.5, -0.5), (3, 0.5, 0.5)))
    cloud = simulate_scan(terrain, (0, 0, 0), _forward(fov=0.2))
    assert len(cloud) > 100
    # x = t * dx with t = 2 / dx: exact up to the final rounding
    assert np.abs(cloud.points[:, 0] - 2.0).max() <= 2 * np.spacing(2.0)
    t, _ = raycast(terrain, (0, 0, 0), np.array([[1.0, 0, 0]]))
    assert t[0] == 2.0


def test_box_shadows_the_wall():
    box_lo, box_hi = (2.0, -0.4, -0.3), (2.6, 0.5, 0.4)
    terrain = _merge(box_mesh(box_lo, box_hi), _wall(5.0, 4.0))
    cfg = _forward(fov=0.9, res=0.015)
    origin = np.array([0.0, 0.1, -0.05])
    cloud = simulate_scan(terrain, origin, cfg)
    dirs = cfg.directions()
    # the oracle: each ray either stops on the box, on the wall, or returns nothing
    want = []
    for d in dirs:
        tb = ray_hits_box(origin, d, box_lo, box_hi)
        if tb is not None:
            want.append(origin + tb * d)
            continue
        tw = (5.0 - origin[0]) / d[0]
        p = origin + tw * d
        if tw <= cfg.max_range and abs(p[1]) <= 4 and abs(p[2]) <= 4:
            want.append(p)
    want = np.array(want)
    assert len(cloud) == len(want)
    assert np.allclose(cloud.points, want, rtol=0, atol=1e-9)
    # and the shadow is really there: wall points behind the box are missing
    on_wall = cloud.points[np.isclose(cloud.points[:, 0], 5.0)]
    scale = (5.0 - origin[0]) / (box_lo[0] - origin[0])
    shadow_lo = origin[1:] + scale * (np.array(box_lo[1:]) - origin[1:])
    shadow_hi = origin[1:] + scale * (np.array(box_hi[1:]) - origin[1:])
    inside = np.all((on_wall[:, 1:] > shadow_lo + 0.05) & (on_wall[:, 1:] < shadow_hi - 0.05), axis=1)
    assert not inside.any()
    assert len(on_wall) > 1000


def test_noise_is_seeded_and_along_the_ray():
    terrain = _merge(_wall(3.0, 10.0))
    cfg = _forward(fov=0.3, noise=0.03)
    a = simulate_scan(terrain, (0, 0, 0), cfg, seed=4)
    b = simulate_scan(terrain, (0, 0, 0), cfg, seed=4)
    c = simulate_scan(terrain, (0, 0, 0), cfg, seed=5)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    clean = simulate_scan(terrain, (0, 0, 0), _forward(fov=0.3))
    err = np.linalg.norm(a.points, axis=1) - np.linalg.norm(clean.points, axis=1)
    assert abs(err.std() - 0.03) < 0.003
    # the offset is along the ray: directions agree
    u = a.points / np.linalg.norm(a.points, axis=1, keepdims=True)
    w = clean.points / np.linalg.norm(clean.points, axis=1, keepdims=True)
    assert np.allclose(u, w, atol=1e-12)


def test_scan_pattern_counts():
    cfg = LidarConfig(azimuth_resolution=0.1, elevation_resolution=0.1)
    dirs = cfg.directions()
    assert len(dirs) == round(2 * math.pi / 0.1) * round(math.pi / 0.1)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    with pytest.raises(ValueError):
        LidarConfig(max_range=0)
    with pytest.raises(ValueError):
        LidarConfig(noise_sigma=-1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bvh_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 120))
    centres = rng.uniform(-3, 3, (m, 1, 3))
    tris = centres + rng.normal(scale=0.6, size=(m, 3, 3))
    mesh = TriangleMesh(tris.reshape(-1, 3), np.arange(3 * m).reshape(m, 3))
    origin = rng.uniform(-4, 4, 3)
    dirs = rng.normal(size=(60, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, hit = BVH(mesh, leaf_size=int(rng.integers(1, 9))).intersect(origin, dirs)
    for k, d in enumerate(dirs):
        ts = [ray_triangle(origin, d, *tri) for tri in tris]
        ts = [(x, i) for i, x in enumerate(ts) if x is not None]
        if not ts:
            assert math.isinf(t[k]) and hit[k] == -1
        else:
            best = min(x for x, _ in ts)
            assert t[k] == pytest.approx(best, rel=1e-9, abs=1e-12)
            assert any(i == hit[k] and abs(x - best) <= 1e-9 for x, i in ts)
