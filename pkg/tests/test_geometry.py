import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from funnelplan.errors import NumericalFailure
from funnelplan.geometry import (
    Circle,
    Ellipsoid,
    Rectangle,
    contains_ellipsoid,
    contains_point,
    extreme_points,
    hull_contains,
    max_outer_value,
    obstacle_from_dict,
    overlaps_obstacle,
    project,
    radical_inverse,
    selection_matrix,
    van_der_corput_order,
)

seeds = st.integers(0, 2**32 - 1)


def disc(r, c=(0.0, 0.0)):
    return Ellipsoid(np.array(c, float), np.eye(2) / r**2)


def random_ellipsoid(rng, n, spread=1.0):
    return Ellipsoid(rng.normal(0, spread, n), random_spd(rng, n))


def boundary_samples(E, m, rng):
    z = rng.standard_normal((m, E.dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return E.center + np.linalg.solve(E.cholesky.T, z.T).T


# construction


def test_rejects_asymmetric_and_degenerate():
    with pytest.raises(ValueError):
        Ellipsoid(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Ellipsoid(np.zeros(2), np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        Ellipsoid(np.zeros(3), np.eye(2))


def test_obstacle_validation_and_round_trip():
    with pytest.raises(ValueError):
        Circle(1, np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        Rectangle(2, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    for o in (Circle(3, np.array([1.0, 2.0]), 0.5), Rectangle(4, np.array([0.0, 0.0]), np.array([1.0, 2.0]))):
        back = obstacle_from_dict(o.to_dict())
        assert back.to_dict() == o.to_dict()


# contains_point


def test_contains_point_examples():
    assert contains_point(disc(1.0), (0, 0))
    assert contains_point(disc(1.0), (1, 0))
    assert not contains_point(Ellipsoid(np.zeros(2), np.diag([4.0, 1.0])), (0.6, 0))
    with pytest.raises(ValueError):
        contains_point(disc(1.0), (0, 0, 0))


# contains_ellipsoid


def test_contains_ellipsoid_examples():
    assert contains_ellipsoid(disc(2.0), disc(1.0))
    assert not contains_ellipsoid(disc(2.0), disc(1.0, (1.5, 0.0)))
    assert contains_ellipsoid(disc(1.0), disc(1.0))
    with pytest.raises(ValueError):
        contains_ellipsoid(disc(1.0), Ellipsoid(np.zeros(3), np.eye(3)))


def test_max_outer_value_closed_form():
    # concentric spheres: max of |x|^2/R^2 over |x| <= r is r^2/R^2
    assert max_outer_value(disc(2.0), disc(1.0)) == pytest.approx(0.25, abs=1e-9)
    # offset disc: farthest point is at distance d + r
    assert max_outer_value(disc(2.0), disc(1.0, (0.5, 0.0))) == pytest.approx(1.5**2 / 4, abs=1e-9)


@given(seeds, st.sampled_from([2, 3, 4]))
def test_containment_matches_boundary_oracle(seed, n):
    rng = np.random.default_rng(seed)
    outer = random_ellipsoid(rng, n, 0.3)
    inner = Ellipsoid(outer.center + rng.normal(0, 0.2, n), random_spd(rng, n, 1.0, 20.0))
    pts = boundary_samples(inner, 4000, rng) - outer.center
    sampled = float(np.max(np.einsum("ij,jk,ik->i", pts, outer.shape, pts)))
    exact = max_outer_value(outer, inner)
    # the exact maximum bounds every sample and is approached by them
    assert sampled <= exact + 1e-9
    assert exact - sampled <= 0.05 * max(1.0, exact)
    if contains_ellipsoid(outer, inner):
        assert sampled <= 1.0 + 1e-6


@given(seeds)
def test_containment_transitive(seed):
    rng = np.random.default_rng(seed)
    A = random_ellipsoid(rng, 3, 0.1)
    B = Ellipsoid(A.center, A.shape * rng.uniform(1.0, 3.0))
    C = Ellipsoid(B.center, B.shape * rng.uniform(1.0, 3.0))
    assert contains_ellipsoid(A, B) and contains_ellipsoid(B, C)
    assert contains_ellipsoid(A, C)
    X, Y, Z = (random_ellipsoid(rng, 2, 0.5) for _ in range(3))
    if contains_ellipsoid(X, Y) and contains_ellipsoid(Y, Z):
        assert contains_ellipsoid(X, Z)


def test_hull_filter_accepts_superset_of_exact():
    rng = np.random.default_rng(7)
    for _ in range(300):
        outer = random_ellipsoid(rng, 2, 0.3)
        inner = Ellipsoid(outer.center + rng.normal(0, 0.3, 2), random_spd(rng, 2, 1.0, 10.0))
        if contains_ellipsoid(outer, inner):
            assert hull_contains(outer, inner, 8)


# extreme_points


def test_extreme_points_examples():
    pts = extreme_points(disc(1.0), 2)
    assert {tuple(np.round(p, 12) + 0.0) for p in pts} == {(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)}
    pts = extreme_points(Ellipsoid(np.zeros(2), np.diag([0.25, 1.0])), 2)
    assert {tuple(np.round(np.abs(p), 12)) for p in pts} == {(2.0, 0.0), (0.0, 1.0)}
    with pytest.raises(ValueError):
        extreme_points(disc(1.0), 1)


@given(seeds, st.sampled_from([2, 3, 4]), st.integers(2, 6))
def test_extreme_points_on_boundary(seed, n, k):
    E = random_ellipsoid(np.random.default_rng(seed), n)
    pts = extreme_points(E, k)
    assert len(pts) >= 2 * n
    d = pts - E.center
    assert np.max(np.abs(np.einsum("ij,jk,ik->i", d, E.shape, d) - 1.0)) < 1e-9


# project


def test_project_block_diagonal():
    E = Ellipsoid(np.array([1.0, 2.0, 3.0, 4.0]), np.diag([1.0, 1.0, 9.0, 9.0]))
    S = project(E, selection_matrix(4, [0, 1]))
    assert np.allclose(S.shape, np.eye(2), atol=1e-12)
    assert np.allclose(S.center, [1.0, 2.0])
    with pytest.raises(ValueError):
        project(E, np.eye(4))


def test_project_monte_carlo_shadow():
    rng = np.random.default_rng(3)
    E = Ellipsoid(rng.normal(0, 1, 4), random_spd(rng, 4))
    B = selection_matrix(4, [0, 1])
    S = project(E, B)
    z = rng.standard_normal((100_000, 4))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z *= rng.random((100_000, 1)) ** 0.25
    x = E.center + np.linalg.solve(E.cholesky.T, z.T).T
    y = x @ B - S.center
    vals = np.einsum("ij,jk,ik->i", y, S.shape, y)
    assert np.all(vals <= 1.0 + 1e-9)
    # the shadow boundary is reached: the sample hull touches it along every direction
    lam, V = np.linalg.eigh(S.shape)
    for th in np.linspace(0, np.pi, 16, endpoint=False):
        u = np.array([math.cos(th), math.sin(th)])
        support = math.sqrt(u @ np.linalg.solve(S.shape, u))
        assert np.max(y @ u) >= 0.98 * support


@given(seeds)
def test_project_nested_equals_composite(seed):
    rng = np.random.default_rng(seed)
    E = random_ellipsoid(rng, 4)
    B1 = selection_matrix(4, [0, 1, 2])
    B2 = selection_matrix(3, [0, 2])
    twice = project(project(E, B1), B2)
    once = project(E, B1 @ B2)
    assert np.allclose(twice.shape, once.shape, atol=1e-9, rtol=0)
    assert np.allclose(twice.center, once.center, atol=1e-12, rtol=0)


def test_project_rejects_non_orthonormal():
    E = Ellipsoid(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        project(E, np.array([[2.0], [0.0], [0.0]]))


# overlaps_obstacle


def test_overlap_examples():
    unit = disc(1.0)
    assert not overlaps_obstacle(unit, Circle(0, np.array([5.0, 0.0]), 1.0))
    assert overlaps_obstacle(unit, Rectangle(0, np.array([0.5, -1.0]), np.array([2.0, 1.0])))
    E = Ellipsoid(np.zeros(2), np.diag([0.25, 1.0]))
    assert overlaps_obstacle(E, Circle(0, np.array([2.5, 0.0]), 0.6))
    assert not overlaps_obstacle(E, Circle(0, np.array([2.5, 0.0]), 0.4))
    # rectangle enclosing the ellipse, and ellipse enclosing the rectangle
    assert overlaps_obstacle(unit, Rectangle(0, np.array([-5.0, -5.0]), np.array([5.0, 5.0])))
    assert overlaps_obstacle(unit, Rectangle(0, np.array([-0.1, -0.1]), np.array([0.1, 0.1])))
    assert not overlaps_obstacle(unit, Rectangle(0, np.array([0.8, 0.8]), np.array([2.0, 2.0])))


def _raster(E, obs, lo, hi, n=200):
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    P = np.column_stack([X.ravel(), Y.ravel()])
    d = P - E.center
    inE = np.einsum("ij,jk,ik->i", d, E.shape, d)
    if isinstance(obs, Circle):
        dist = np.hypot(P[:, 0] - obs.center[0], P[:, 1] - obs.center[1]) - obs.radius
    else:
        g = np.maximum(np.maximum(obs.lo - P, P - obs.hi), 0.0)
        inside = np.all((P >= obs.lo) & (P <= obs.hi), axis=1)
        dist = np.where(inside, -1.0, np.hypot(g[:, 0], g[:, 1]))
    return inE, dist, (hi[0] - lo[0]) / (n - 1)


@given(seeds, st.booleans())
def test_overlap_matches_raster_oracle(seed, circle):
    rng = np.random.default_rng(seed)
    E = Ellipsoid(rng.uniform(-1, 1, 2), random_spd(rng, 2, 0.3, 4.0))
    if circle:
        obs = Circle(0, rng.uniform(-3, 3, 2), rng.uniform(0.2, 1.5))
    else:
        a = rng.uniform(-3, 3, 2)
        obs = Rectangle(0, a, a + rng.uniform(0.2, 2.5, 2))
    inE, dist, cell = _raster(E, obs, (-6, -6), (6, 6))
    both = (inE <= 1.0) & (dist <= 0.0)
    got = overlaps_obstacle(E, obs)
    if both.any():
        assert got
    elif got:
        # only near-tangent cases may be missed by the raster
        near = (inE <= (1.0 + 3 * cell * math.sqrt(np.max(np.linalg.eigvalsh(E.shape))))**2) & (dist <= 2 * cell)
        assert near.any()


# van der Corput


def test_van_der_corput_examples():
    assert van_der_corput_order(4) == [0, 2, 1, 3]
    assert van_der_corput_order(1) == [0]
    assert van_der_corput_order(8)[:4] == [0, 4, 2, 6]
    assert radical_inverse(1) == 0.5 and radical_inverse(2) == 0.25 and radical_inverse(3) == 0.75
    with pytest.raises(ValueError):
        van_der_corput_order(0)


@given(st.integers(1, 300))
def test_van_der_corput_is_permutation(n):
    order = van_der_corput_order(n)
    assert sorted(order) == list(range(n))
