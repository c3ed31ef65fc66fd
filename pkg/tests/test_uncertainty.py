import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activemap.field import Architecture, FieldParams, PositionalEmbedding, forward
from activemap.uncertainty import (Grid, cluster_candidates, evaluate_grid, extract_zero_crossings,
                                   free_side_viewpoint, landscape_slice, marching_squares_midpoints,
                                   neural_variability, orthonormal_basis, perturbation_scale,
                                   place_target_views, select_high_variance, write_pgm,
                                   write_scores_csv)
from activemap.world import AgentPose

import oracles


class Circle:
    """Analytic SDF of a disc of radius ``r`` (free outside), sign optional."""

    def __init__(self, r=1.0, sign=1.0, center=(0.0, 0.0)):
        self.r, self.s, self.c = r, sign, np.asarray(center, float)

    def sdf(self, x):
        x = np.atleast_2d(x) - self.c
        return self.s * (np.hypot(x[:, 0], x[:, 1]) - self.r)

    def grad(self, x):
        x = np.atleast_2d(x) - self.c
        n = np.hypot(x[:, 0], x[:, 1])[:, None]
        return self.s * x / np.where(n > 0, n, 1.0)

    __call__ = sdf


BOX = (-2.0, -2.0, 2.0, 2.0)


def linear_params():
    arch = Architecture(n_hidden=0, embedding=PositionalEmbedding(n_bands=0))
    return FieldParams(arch, np.array([1.0, 0.0, 0.0]))


def small_net(seed):
    arch = Architecture(width=6, n_hidden=3, embedding=PositionalEmbedding(n_bands=2))
    return FieldParams(arch, np.random.default_rng(seed).normal(0, 0.5, arch.n_params()))


# -- zero crossings ------------------------------------------------------------

def test_circle_contour_within_one_percent():
    zc = extract_zero_crossings(Circle(), BOX, 0.02)
    r = np.hypot(*zc.points.T)
    assert len(zc) > 300
    assert np.all(np.abs(r - 1.0) <= 0.01)


def test_positive_field_has_no_crossings():
    zc = extract_zero_crossings(lambda p: np.full(len(p), 0.3), BOX, 0.1)
    assert len(zc) == 0


def test_negated_field_gives_identical_points():
    a = extract_zero_crossings(Circle(0.77, center=(0.1, -0.2)), BOX, 0.05).points
    b = extract_zero_crossings(Circle(0.77, -1.0, center=(0.1, -0.2)), BOX, 0.05).points
    assert np.array_equal(a, b)


def test_degenerate_region_rejected():
    with pytest.raises(ValueError):
        extract_zero_crossings(Circle(), (0.0, 0.0, 0.0, 1.0), 0.1)
    with pytest.raises(ValueError):
        extract_zero_crossings(Circle(), BOX, 0.0)


def test_iso_tolerance_holds():
    zc = extract_zero_crossings(Circle(), BOX, 0.1, iso_tol=0.004)
    assert np.all(np.abs(Circle().sdf(zc.points)) <= 0.004)


def test_single_cell_cases():
    # one positive corner: segment midpoint between the two crossing edges
    g = Grid(0.0, 0.0, 1.0, np.array([[1.0, -1.0], [-1.0, -1.0]]))
    assert np.allclose(marching_squares_midpoints(g), [[0.25, 0.25]])
    # saddle whose centre is positive joins the positive corners
    g = Grid(0.0, 0.0, 1.0, np.array([[3.0, -1.0], [-1.0, 3.0]]))
    pts = marching_squares_midpoints(g)
    assert len(pts) == 2
    # each segment cuts off one negative corner: (1, 0) and (0, 1)
    assert np.allclose(sorted(map(tuple, pts)), [(0.125, 0.875), (0.875, 0.125)])


def test_grid_covers_bounds():
    g = evaluate_grid(Circle(), (0.0, 0.0, 1.0, 0.5), 0.25)
    assert g.shape == (3, 5)
    assert np.allclose(g.node_coords()[-1], [1.0, 0.5])


# -- variability ---------------------------------------------------------------

def test_zero_scale_gives_zero_variance():
    s = neural_variability(small_net(0), np.random.default_rng(0).normal(size=(20, 2)), 0.0, 5)
    assert np.all(s.variance == 0)


def test_linear_field_variance_closed_form():
    # f = w1*x + w2*y + c with every parameter perturbed: Var = b^2 (x^2 + y^2 + 1)
    s = neural_variability(linear_params(), [[2.0, 0.0]], 0.1, 10 ** 4, seed=0)
    assert s.variance[0] == pytest.approx(0.05, rel=0.1)
    assert s.mean[0] == pytest.approx(2.0, abs=0.01)


def test_variability_is_seeded():
    pts = np.random.default_rng(0).normal(size=(10, 2))
    a = neural_variability(small_net(1), pts, 0.01, 10, seed=3)
    b = neural_variability(small_net(1), pts, 0.01, 10, seed=3)
    assert np.array_equal(a.variance, b.variance)


def test_variability_requires_two_draws():
    with pytest.raises(ValueError):
        neural_variability(small_net(0), [[0.0, 0.0]], 0.1, 1)


def test_perturbation_scale_normalization():
    assert perturbation_scale(2.0, 4) == 1.0
    assert perturbation_scale(2.0, 4, normalize=False) == 2.0


# -- selection -------------------------------------------------------------------

def test_top_ten_percent():
    v = np.random.default_rng(0).uniform(size=100)
    idx = select_high_variance(v, 0.1)
    assert len(idx) == 10
    rest = np.setdiff1d(np.arange(100), idx)
    assert v[idx].min() >= v[rest].max()


def test_full_fraction_returns_all():
    assert sorted(select_high_variance(np.arange(7.0), 1.0)) == list(range(7))


def test_ties_go_to_lowest_index():
    assert select_high_variance(np.ones(7), 0.1).tolist() == [0]


def test_empty_selection_and_bad_fraction():
    assert len(select_high_variance([], 0.5)) == 0
    with pytest.raises(ValueError):
        select_high_variance([1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=60),
       st.floats(0.01, 1.0), st.floats(0.1, 100))
def test_selection_properties(vals, frac, scale):
    v = np.array(vals)
    idx = select_high_variance(v, frac)
    assert len(idx) == math.ceil(frac * len(v) - 1e-9)
    rest = np.setdiff1d(np.arange(len(v)), idx)
    if len(rest):
        assert v[idx].min() >= v[rest].max()
    # invariant under positive rescaling
    assert np.array_equal(select_high_variance(v * scale, frac), idx) or len(set(v)) < len(v)


# -- clustering --------------------------------------------------------------------

def test_far_points_form_two_clusters():
    assert len(cluster_candidates([[0, 0], [5, 0]], 0.5)) == 2


def test_chain_is_one_cluster():
    pts = [[0.45 * i, 0.0] for i in range(20)]
    assert len(cluster_candidates(pts, 0.5)) == 1


@pytest.mark.parametrize("seed", range(5))
def test_clusters_match_transitive_closure(seed):
    pts = np.random.default_rng(seed).uniform(0, 4, size=(50, 2))
    got = {frozenset(c.tolist()) for c in cluster_candidates(pts, 0.5)}
    assert got == oracles.bfs_components(pts, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 40))
def test_clusters_partition_input(seed, n):
    pts = np.random.default_rng(seed).uniform(0, 3, size=(n, 2))
    cl = cluster_candidates(pts, 0.4)
    flat = np.concatenate(cl) if cl else np.zeros(0, int)
    assert sorted(flat.tolist()) == list(range(n))
    assert [c[0] for c in cl] == sorted(c[0] for c in cl)


# -- viewpoint placement -----------------------------------------------------------

def test_viewpoint_on_circle_normal():
    c = place_target_views([np.array([0])], np.array([[1.0, 0.0]]), np.array([0.3]), Circle(),
                           d_place=0.5)
    assert len(c) == 1
    assert np.allclose(c[0].position, [1.5, 0.0])
    assert abs(abs(c[0].viewpoint.heading) - math.pi) < 1e-12
    assert c[0].count == 1 and c[0].max_variance == 0.3


def test_viewpoint_independent_of_normal_orientation():
    c = np.array([0.025, 0.9995])
    n = c / np.linalg.norm(c)
    a = free_side_viewpoint(Circle().sdf, c, n, 0.7, 0.1)
    b = free_side_viewpoint(Circle().sdf, c, -n, 0.7, 0.1)
    assert np.array_equal(a, b)
    # flipping the field flips the free side
    inner = free_side_viewpoint(Circle(sign=-1.0).sdf, c, n, 0.7, 0.1)
    assert np.hypot(*inner) < 1.0


def test_viewpoint_in_occupied_surroundings_dropped():
    class Slab(Circle):
        # thin free sheet inside solid: both offsets land in occupied space
        def sdf(self, x):
            return 0.05 - np.abs(np.atleast_2d(x)[:, 0])

        def grad(self, x):
            return np.tile([1.0, 0.0], (len(np.atleast_2d(x)), 1))

    log = []
    out = place_target_views([np.array([0])], np.array([[0.05, 0.0]]), np.ones(1), Slab(), 1.0,
                             log=log)
    assert out == [] and log == [(0, "occupied-viewpoint")]


def test_vanishing_gradient_dropped():
    class Flat(Circle):
        def grad(self, x):
            return np.zeros((len(np.atleast_2d(x)), 2))

    log = []
    assert place_target_views([np.array([0])], np.zeros((1, 2)), np.ones(1), Flat(), 1.0,
                              log=log) == []
    assert log == [(0, "vanishing-gradient")]


def test_placed_viewpoints_keep_clearance():
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, 2 * np.pi, 40)
    pts = np.stack([np.cos(ang), np.sin(ang)], 1)
    circle = Circle(1.0)
    cl = cluster_candidates(pts, 0.3)
    for c in place_target_views(cl, pts, rng.uniform(size=40), circle, 1.0, 0.1,
                                AgentPose(3.0, 0.0)):
        assert circle.sdf(c.position)[0] >= 0.1
        assert c.distance == pytest.approx(np.hypot(*(c.centroid - [3.0, 0.0])))


def test_free_side_prefers_positive_side():
    p = free_side_viewpoint(Circle(), np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 0.5, 0.1)
    assert np.allclose(p, [1.5, 0.0])


def test_place_rejects_bad_distance():
    with pytest.raises(ValueError):
        place_target_views([], np.zeros((0, 2)), np.zeros(0), Circle(), 0.0)


# -- landscape -------------------------------------------------------------------

def test_unit_directions_are_preserved():
    a = np.zeros(5)
    e1, e2 = np.eye(5)[0], np.eye(5)[1]
    u, v = orthonormal_basis(a, a + e1, a + e2)
    assert np.array_equal(u, e1) and np.array_equal(v, e2)


def test_collinear_basis_rejected():
    a = np.zeros(4)
    with pytest.raises(ValueError):
        orthonormal_basis(a, a + 1.0, a + 2.0)


def test_slice_origin_and_cells_match_direct_evaluation():
    ta, tb, tc = small_net(0), small_net(1), small_net(2)
    probe = [0.3, -0.4]
    us = np.linspace(-1, 1, 5)
    vs = np.linspace(-0.5, 1.5, 4)
    sl = landscape_slice(ta, tb, tc, probe, us, vs)
    assert abs(sl.u @ sl.v) <= 1e-6
    assert np.linalg.norm(sl.u) == pytest.approx(1.0) and np.linalg.norm(sl.v) == pytest.approx(1.0)
    assert sl.values[2, 1] != 0
    i0 = 2
    assert sl.values[i0, np.argmin(np.abs(vs))] >= 0
    assert landscape_slice(ta, tb, tc, probe, [0.0], [0.0]).values[0, 0] == abs(forward(ta, probe))

    # direct reconstruction: Gram-Schmidt done by hand
    d1 = tb.flat - ta.flat
    d2 = tc.flat - ta.flat
    u = d1 / np.linalg.norm(d1)
    w = d2 - (d2 @ u) * u
    v = w / np.linalg.norm(w)
    rng = np.random.default_rng(0)
    for _ in range(5):
        i, j = rng.integers(0, 5), rng.integers(0, 4)
        theta = ta.flat + us[i] * u + vs[j] * v
        ref = abs(oracles.mlp(probe, oracles.layers_of(FieldParams(ta.arch, theta)), 2, math.pi))
        assert sl.values[i, j] == pytest.approx(ref, rel=1e-10, abs=1e-12)
    assert sl.project(tb.flat) == pytest.approx((np.linalg.norm(d1), 0.0))


def test_writers(tmp_path):
    s = neural_variability(small_net(0), [[0.0, 0.0], [1.0, 1.0]], 0.01, 3)
    write_scores_csv(s, tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "x,y,variance"
    write_pgm(np.array([[0.0, 1.0], [2.0, 3.0]]), tmp_path / "a.pgm")
    blob = (tmp_path / "a.pgm").read_bytes()
    assert blob.startswith(b"P5\n2 2\n255\n") and blob[-4:] == bytes([0, 85, 170, 255])
