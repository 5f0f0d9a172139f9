import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climbnav.errors import DegenerateBounds, EmptySurface
from climbnav.geometry import OrientedCloud
from climbnav.mesh import TriangleMesh, load_obj, save_obj
from climbnav.reconstruct import (ScalarGrid, VectorGrid, choose_isovalue, extract_isosurface,
                                  grid_dims, load_grid, poisson_residual, reconstruct_surface,
                                  save_grid, solve_poisson, splat_normals)

from oracles import manufactured_field, mesh_distance_upper_bound, unit_sphere_cloud


def _cloud(pos, nrm):
    return OrientedCloud(pos, nrm, (10.0, 0.0, 0.0))


def _box_cloud():
    # corners of a box, so the padded bounds are easy to predict
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    nrm = np.tile([0.0, 0.0, 1.0], (5, 1))
    return pos, nrm


def _sphere_mesh(resolution, seed=0, sigma=0.01):
    pos, nrm = unit_sphere_cloud(2000, sigma, seed)
    rec = reconstruct_surface(_cloud(pos, nrm), resolution=resolution)
    return rec, pos


def _radial_rms(mesh):
    r = np.linalg.norm(mesh.vertices, axis=1)
    return float(np.sqrt(np.mean((r - 1.0) ** 2)))


# -- splatting ---------------------------------------------------------------------------

def test_point_on_a_node_lands_on_that_node():
    pos, nrm = _box_cloud()
    # padding 0 and 8 cells per unit axis: every corner point is a node
    v = splat_normals(_cloud(pos, nrm), (8, 8, 8), 0.0)
    assert v.spacing == 0.125
    assert np.array_equal(v.values[0, 0, 0], [0, 0, 1])
    assert np.array_equal(v.values[1, 0, 0], [0, 0, 0])
    assert np.array_equal(v.values[0, 1, 0], [0, 0, 0])
    assert np.array_equal(v.values[8, 8, 8], [0, 0, 1])


def test_point_at_cell_centre_splits_eight_ways():
    pos, nrm = _box_cloud()
    pos = np.vstack([pos, [0.0625, 0.0625, 0.0625]])
    nrm = np.vstack([np.zeros((5, 3)), [[0.0, 1.0, 0.0]]])
    v = splat_normals(_cloud(pos, nrm), (8, 8, 8), 0.0)
    block = v.values[:2, :2, :2].reshape(8, 3)
    assert np.array_equal(block, np.tile([0.0, 0.125, 0.0], (8, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 20), st.floats(0.0, 0.5))
def test_splat_conserves_the_normal_sum(seed, n, padding):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(60, 3))
    nrm = rng.normal(size=(60, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    v = splat_normals(_cloud(pos, nrm), (n, n + 1, n + 2), padding)
    assert np.allclose(v.values.reshape(-1, 3).sum(axis=0), nrm.sum(axis=0), rtol=0, atol=1e-9)
    assert np.isclose(v.density.sum(), 60.0, rtol=0, atol=1e-9)
    # bounding box covers the padded cloud
    hi = v.origin + v.spacing * np.asarray(v.dims)
    assert np.all(v.origin <= pos.min(axis=0) - padding + 1e-9)
    assert np.all(hi >= pos.max(axis=0) + padding - 1e-9)


def test_splat_rejects_zero_extent_and_small_dims():
    pos = np.zeros((4, 3))
    with pytest.raises(DegenerateBounds):
        splat_normals(_cloud(pos, np.tile([0, 0, 1.0], (4, 1))), (8, 8, 8), 0.0)
    with pytest.raises(DegenerateBounds):
        grid_dims(pos, 32)
    p, n = _box_cloud()
    with pytest.raises(ValueError):
        splat_normals(_cloud(p, n), (8, 7, 8), 0.1)


# -- Poisson solve --------------------------------------------------------------------

def test_zero_field_gives_zero_indicator():
    v = VectorGrid((8, 8, 8), (0, 0, 0), 0.1, np.zeros((9, 9, 9, 3)), np.zeros((9, 9, 9)))
    chi = solve_poisson(v, screening=0.0)
    assert np.array_equal(chi.values, np.zeros((9, 9, 9)))


def _manufactured_error(n):
    chi_true, grad = manufactured_field(n)
    v = VectorGrid((n, n, n), (0, 0, 0), 1.0 / n, grad, np.zeros(chi_true.shape))
    chi = solve_poisson(v, screening=0.0)
    assert poisson_residual(chi, v, 0.0) <= 1e-6
    err = chi.values - (chi_true - chi_true.mean())
    return float(np.abs(err).max())


def test_manufactured_solution_is_second_order():
    e32, e64 = _manufactured_error(32), _manufactured_error(64)
    assert e64 < 5e-3
    assert 3.0 <= e32 / e64 <= 5.0


def test_residual_contract_on_a_screened_sphere():
    pos, nrm = unit_sphere_cloud(500, 0.01, 3)
    dims, pad = grid_dims(pos, 32)
    v = splat_normals(_cloud(pos, nrm), dims, pad)
    for tol in (1e-3, 1e-6):
        chi = solve_poisson(v, tol=tol)
        assert poisson_residual(chi, v, 4.0 / v.spacing) <= tol
        assert np.all(np.isfinite(chi.values))


# -- isovalue --------------------------------------------------------------------------

def test_isovalue_of_constant_field():
    g = ScalarGrid((8, 8, 8), (0, 0, 0), 0.25, np.full((9, 9, 9), 3.5))
    pts = np.random.default_rng(0).uniform(0, 2, (30, 3))
    assert choose_isovalue(g, _cloud(pts, np.tile([0, 0, 1.0], (30, 1)))) == 3.5


def test_isovalue_of_linear_field_on_a_plane():
    g = ScalarGrid((8, 8, 8), (0, 0, 0), 0.25, np.zeros((9, 9, 9)))
    z = g.node_coords()[2]
    g.values[:] = 2.0 * z - 1.0
    rng = np.random.default_rng(1)
    pts = np.c_[rng.uniform(0, 2, (40, 2)), np.full(40, 0.7)]
    iso = choose_isovalue(g, _cloud(pts, np.tile([0, 0, 1.0], (40, 1))))
    assert iso == pytest.approx(0.4, abs=1e-12)


def test_sphere_surface_passes_within_a_cell_of_every_sample():
    rec, pos = _sphere_mesh(64)
    d = mesh_distance_upper_bound(rec.mesh.vertices, rec.mesh.triangles, pos)
    assert d.max() <= rec.grid.spacing


# -- marching cubes ----------------------------------------------------------------------

def _norm_field(n=40, half=1.2):
    h = 2 * half / n
    g = ScalarGrid((n, n, n), (-half,) * 3, h, np.zeros((n + 1,) * 3))
    x, y, z = np.meshgrid(*g.node_coords(), indexing="ij")
    g.values = np.sqrt(x ** 2 + y ** 2 + z ** 2)
    return g


def test_norm_field_gives_a_closed_sphere():
    g = _norm_field()
    m = extract_isosurface(g, 0.5)
    r = np.linalg.norm(m.vertices, axis=1)
    assert r.min() >= 0.5 - g.spacing and r.max() <= 0.5 + g.spacing
    assert m.is_closed()
    assert m.euler_characteristic() == 2
    # winding faces increasing values, i.e. outward here
    centres = m.vertices[m.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", m.face_normals(), centres) > 0)


def test_iso_outside_range_is_empty():
    g = _norm_field(16)
    with pytest.raises(EmptySurface):
        extract_isosurface(g, -1.0)
    with pytest.raises(EmptySurface):
        extract_isosurface(g, g.values.max())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.floats(-0.8, 0.8))
def test_no_edge_is_shared_by_more_than_two_triangles(seed, n, iso):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-1, 1, (n + 1, n + 2, n + 3))
    # ties with the isovalue are legal input too
    vals[rng.random(vals.shape) < 0.1] = iso
    g = ScalarGrid((n, n + 1, n + 2), (0, 0, 0), 1.0, vals)
    try:
        m = extract_isosurface(g, iso)
    except EmptySurface:
        return
    _, counts = m.edges()
    assert counts.max() <= 2
    assert len(np.unique(np.sort(m.triangles, axis=1), axis=0)) == m.n_triangles
    # fields strictly inside a zero border never touch the boundary: closed
    inner = np.full((n + 3, n + 4, n + 5), 1.0)
    inner[1:-1, 1:-1, 1:-1] = vals
    m2 = extract_isosurface(ScalarGrid((n + 2, n + 3, n + 4), (0, 0, 0), 1.0, inner), iso)
    if m2.n_triangles:
        assert m2.is_closed()


# -- whole reconstruction -----------------------------------------------------------------

def test_noisy_sphere_64_is_closed_and_accurate():
    rec, _ = _sphere_mesh(64)
    assert rec.mesh.is_closed()
    assert rec.mesh.euler_characteristic() == 2
    assert _radial_rms(rec.mesh) <= 0.05


@pytest.mark.xfail(strict=True, reason=(
    "known limitation: the one-cell trilinear splat averages sensor noise over a "
    "footprint that halves with the spacing, so at sigma=0.01 the 128 grid tracks "
    "the noise (RMS ~0.0058 vs ~0.0045 at 64); see the decision ledger"))
def test_finer_grid_does_not_worsen_the_sphere():
    coarse, _ = _sphere_mesh(64, seed=2)
    fine, _ = _sphere_mesh(128, seed=2)
    assert _radial_rms(fine.mesh) <= _radial_rms(coarse.mesh)


def test_both_resolutions_meet_the_sphere_bound():
    for res in (64, 128):
        rec, _ = _sphere_mesh(res, seed=2)
        assert rec.mesh.is_closed()
        assert _radial_rms(rec.mesh) <= 0.05


@pytest.mark.parametrize("offset", [(0.5, -1.25, 2.0), (-3.0, 0.0, 0.375)])
def test_translation_equivariance(offset):
    pos, nrm = unit_sphere_cloud(400, 0.01, 4)
    # the solve is only accurate to its tolerance, so the mesh moves by the
    # offset up to an error that shrinks with it
    for tol, atol in ((1e-6, 1e-6), (1e-11, 1e-9)):
        a = reconstruct_surface(_cloud(pos, nrm), resolution=24, tol=tol).mesh
        b = reconstruct_surface(_cloud(pos + offset, nrm), resolution=24, tol=tol).mesh
        assert np.array_equal(a.triangles, b.triangles)
        assert np.allclose(b.vertices, a.vertices + offset, rtol=0, atol=atol)


def test_trim_drops_far_surface():
    pos, nrm = unit_sphere_cloud(400, 0.0, 5)
    half = pos[:, 2] > 0
    full = reconstruct_surface(_cloud(pos[half], nrm[half]), resolution=24).mesh
    trimmed = reconstruct_surface(_cloud(pos[half], nrm[half]), resolution=24, trim_distance=0.15).mesh
    assert 0 < trimmed.n_vertices < full.n_vertices
    assert trimmed.vertices[:, 2].min() > -0.2


# -- I/O ---------------------------------------------------------------------------------

def test_grid_dump_roundtrip(tmp_path):
    g = _norm_field(10)
    header = save_grid(tmp_path / "chi.raw", g)
    assert header.exists()
    assert (tmp_path / "chi.raw").stat().st_size == 8 * 11 ** 3
    back = load_grid(tmp_path / "chi.raw")
    assert back.dims == g.dims and back.spacing == g.spacing
    assert np.array_equal(back.origin, g.origin) and np.array_equal(back.values, g.values)


def test_obj_roundtrip(tmp_path):
    m = extract_isosurface(_norm_field(12), 0.6)
    save_obj(tmp_path / "m.obj", m, header="sphere")
    back = load_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_triangle_mesh_rejects_bad_indices():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
