import math

import numpy as np
import pytest

from tabletop.assets import build_catalog, make_box, make_sphere, sample_surface_points, scale_mesh
from tabletop.sdf import (analytic_box_sdf, analytic_box_sdf_grad, build_sdf_grid, cache_key, load_grid,
                          query_sdf, query_sdf_gradient, save_grid, to_object_frame, to_world_frame)


@pytest.fixture(scope="module")
def cube_grid():
    return build_sdf_grid(make_box(), 64)


@pytest.fixture(scope="module")
def sphere_grid():
    return build_sdf_grid(scale_mesh(make_sphere(64, 32), (0.2, 0.2, 0.2)), 64)


def test_analytic_box_values():
    h = (0.5, 0.5, 0.5)
    assert analytic_box_sdf((0, 0, 0), h) == -0.5
    assert analytic_box_sdf((1, 0, 0), h) == 0.5
    assert analytic_box_sdf((1, 1, 0), h) == pytest.approx(math.sqrt(0.5), abs=1e-5)


def test_cube_grid_matches_analytic(cube_grid):
    assert cube_grid.query([[0, 0, 0]])[0] == pytest.approx(-0.5, abs=cube_grid.cell_size)
    pts = np.random.default_rng(0).uniform(-0.6, 0.6, (2000, 3))
    err = np.abs(cube_grid.query(pts) - analytic_box_sdf(pts, np.full(3, 0.5)))
    assert err.max() < cube_grid.cell_size


def test_sphere_center(sphere_grid):
    # a 32-segment polyhedral sphere is slightly inside the true sphere
    assert sphere_grid.query([[0, 0, 0]])[0] == pytest.approx(-0.1, abs=sphere_grid.cell_size)


def test_outside_padding_nonnegative(cube_grid):
    far = np.array([[5.0, 0, 0], [0, -3, 2], [10, 10, 10]])
    v = cube_grid.query(far)
    assert np.all(v >= 0)
    # lower bound on distance to the box
    assert np.all(v >= analytic_box_sdf(far, np.full(3, 0.5)) - 0.2)


def test_sign_convention_catalog():
    cat = build_catalog()
    for aid in cat.entries:
        m = cat.mesh(aid)
        g = build_sdf_grid(m, 32)
        lo, hi = m.bounds
        ext = hi - lo
        outside = np.array([[hi[0] + 0.05 * ext[0], 0, 0], [0, 0, hi[2] + 0.05 * ext[2]], [0, lo[1] - 0.05, 0]])
        assert np.all(g.query(outside) > 0), aid
        assert g.values.min() < 0, aid


def test_translation_invariance_exact(cube_grid):
    x = np.array([[0.125, -0.25, 0.0625], [0.5, 0.375, -0.125]])
    t = np.array([0.25, 0.5, -0.75])
    np.testing.assert_array_equal(query_sdf(cube_grid, x + t, t), query_sdf(cube_grid, x))


def test_yaw_invariance(cube_grid):
    x = np.random.default_rng(1).uniform(-0.4, 0.4, (50, 3))
    pos, yaw = np.array([0.3, -0.2, 0.1]), 0.7
    w = to_world_frame(x, pos, yaw)
    np.testing.assert_allclose(query_sdf(cube_grid, w, pos, yaw), cube_grid.query(x), atol=1e-12)
    np.testing.assert_allclose(to_object_frame(w, pos, yaw), x, atol=1e-14)


def test_gradient_matches_finite_differences(sphere_grid):
    g = sphere_grid
    rng = np.random.default_rng(2)
    pts = rng.uniform(g.origin + g.spacing, g.upper - g.spacing, (1000, 3))
    # stay away from cell faces, where the trilinear gradient jumps
    frac = (pts - g.origin) / g.spacing
    frac -= np.floor(frac)
    ok = np.all((frac > 0.2) & (frac < 0.8), axis=1)
    pts = pts[ok]
    _, grad = g.query_with_grad(pts)
    h = g.cell_size / 10
    fd = np.stack([(g.query(pts + h * e) - g.query(pts - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    rel = np.linalg.norm(fd - grad, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-12)
    assert rel.max() <= 1e-3


def test_sphere_gradient_radial(sphere_grid):
    p = np.array([[0.05, 0.0, 0.0], [0.0, -0.06, 0.0], [0.03, 0.03, 0.03]])
    _, gr = sphere_grid.query_with_grad(p)
    cos = np.sum(gr * p, axis=1) / (np.linalg.norm(gr, axis=1) * np.linalg.norm(p, axis=1))
    assert np.all(cos > 0.97)


def test_world_gradient_rotates(cube_grid):
    p = np.array([[0.3, 0.1, 0.0]])
    g0 = query_sdf_gradient(cube_grid, p)
    yaw = math.pi / 2
    g1 = query_sdf_gradient(cube_grid, to_world_frame(p, (0, 0, 0), yaw), (0, 0, 0), yaw)
    np.testing.assert_allclose(g1[0], [-g0[0, 1], g0[0, 0], g0[0, 2]], atol=1e-9)


def test_analytic_gradient():
    pts = np.random.default_rng(3).uniform(-1, 1, (200, 3))
    h = np.array([0.3, 0.2, 0.1])
    g = analytic_box_sdf_grad(pts, h)
    eps = 1e-6
    fd = np.stack([(analytic_box_sdf(pts + eps * e, h) - analytic_box_sdf(pts - eps * e, h)) / (2 * eps)
                   for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(g, fd, atol=1e-5)


def test_cache_roundtrip(tmp_path, cube_grid):
    path = tmp_path / f"{cache_key('box', (1, 1, 1), 64)}.sdf"
    save_grid(cube_grid, path)
    back = load_grid(path)
    assert back.dims == cube_grid.dims
    np.testing.assert_array_equal(back.origin, cube_grid.origin)
    np.testing.assert_array_equal(back.values, cube_grid.values.astype(np.float32))
    assert cache_key("box", (1, 1, 1), 64) != cache_key("box", (1, 1, 1), 32)


def test_surface_points_near_zero(cube_grid):
    pts = sample_surface_points(make_box(), 500, seed=0)
    err = np.abs(cube_grid.query(pts))
    # exact on flat faces; trilinear blur only in the cells touching an edge
    assert np.median(err) < 1e-9
    assert err.max() < cube_grid.cell_size / 2
