import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from sardkit.errors import (
    CoordinateOutOfRange,
    DimensionMismatch,
    DisconnectedWarning,
    DuplicateLocation,
    NonpositiveArea,
    TooFewLocations,
)
from sardkit.geometry import PLANAR, TORUS, build_domain, build_stars, contiguity, grid_domain


def brute_force_star(domain, i, n_s):
    d = domain.wrap(domain.locations - domain.locations[i])
    r = np.sqrt((d**2).sum(axis=1))
    r[i] = np.inf
    q = np.round(r / (np.sort(r)[n_s - 1] * 1e-9))
    return np.lexsort((np.arange(domain.n), q))[:n_s]


def test_grid_domain_144():
    d = grid_domain(12)
    assert d.n == 144
    assert d.topology == TORUS
    assert_allclose(d.areas, 1 / 144)
    assert_allclose(d.total_area(), 1.0)


def test_single_point_domain_has_no_stars():
    d = build_domain([[0.3, 0.4]], [1.0])
    assert d.n == 1 and d.topology == PLANAR
    with pytest.raises(TooFewLocations):
        build_stars(d, 8)


@pytest.mark.parametrize(
    "points, areas, kwargs, exc",
    [
        ([[0, 0], [0, 0]], [1, 1], {}, DuplicateLocation),
        ([[0, 0], [1, 0]], [1, 0], {}, NonpositiveArea),
        ([[0, 0], [1, 0]], [1, -2], {}, NonpositiveArea),
        ([[0, 0], [1.0, 0]], [1, 1], dict(topology=TORUS, width=1, height=1), CoordinateOutOfRange),
        ([[0, 0], [1, 0]], [1], {}, DimensionMismatch),
    ],
)
def test_build_domain_rejects(points, areas, kwargs, exc):
    with pytest.raises(exc):
        build_domain(points, areas, **kwargs)


def test_torus_wrap_is_minimum_image():
    d = grid_domain(10)
    assert_allclose(d.wrap(np.array([[0.9, -0.6]])), [[-0.1, 0.4]], atol=1e-12)


def test_interior_star_is_the_eight_surrounding_cells():
    d = grid_domain(5, torus=False)
    stars = build_stars(d, 8)
    center = 2 * 5 + 2
    expected = {(2 + a) * 5 + (2 + b) for a in (-1, 0, 1) for b in (-1, 0, 1)} - {center}
    assert set(stars[center].members) == expected
    assert center not in stars[center].members


@pytest.mark.parametrize("i", [0, 9, 90, 99, 45])
def test_torus_corner_star_matches_brute_force(i):
    d = grid_domain(10)
    stars = build_stars(d, 8)
    assert list(stars[i].members) == list(brute_force_star(d, i, 8))
    if i == 0:
        assert 99 in stars[i].members  # diagonal neighbour across both edges


def test_star_offsets_are_center_minus_member():
    d = grid_domain(6)
    s = build_stars(d, 8)[0]
    assert_allclose(s.offsets, d.wrap(d.locations[0] - d.locations[s.members]), atol=1e-12)
    assert_allclose(s.dm, np.sqrt(2) / 6)


def test_star_with_every_other_location():
    d = build_domain(np.random.default_rng(0).uniform(size=(7, 2)), np.ones(7))
    stars = build_stars(d, 6)
    for i in range(7):
        assert sorted(stars[i].members) == sorted(set(range(7)) - {i})


def test_ties_broken_by_lower_index():
    # the four axis neighbours and the four diagonal ones are tied in pairs of four
    d = grid_domain(5, torus=False)
    stars = build_stars(d, 4)
    assert list(stars[12].members) == [7, 11, 13, 17]
    stars = build_stars(d, 6)
    assert list(stars[12].members) == [7, 11, 13, 17, 6, 8]


def test_uniform_torus_stars_are_congruent():
    d = grid_domain(8)
    stars = build_stars(d, 8)
    ref = np.sort(stars.offsets[0].round(12), axis=0)
    for i in range(d.n):
        assert_allclose(np.sort(stars.offsets[i].round(12), axis=0), ref, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_star_membership_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(size=(30, 2))
    perm = rng.permutation(30)
    a = build_stars(build_domain(pts, np.ones(30)), 5)
    b = build_stars(build_domain(pts[perm], np.ones(30)), 5)
    inv = np.argsort(perm)
    for i in range(30):
        assert set(perm[b[inv[i]].members]) == set(a[i].members)


def test_rook_first_order_has_four_neighbours():
    c = contiguity(grid_domain(6, torus=False), "rook", 1)
    counts = np.asarray(c.cumulative(1).sum(axis=1)).ravel().reshape(6, 6)
    assert np.all(counts[1:-1, 1:-1] == 4)
    assert counts[0, 0] == 2


def bfs_orders(n, i0, j0, torus):
    dist = {}
    frontier = [(i0, j0)]
    dist[(i0, j0)] = 0
    while frontier:
        nxt = []
        for i, j in frontier:
            for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                u, v = i + a, j + b
                if torus:
                    u, v = u % n, v % n
                elif not (0 <= u < n and 0 <= v < n):
                    continue
                if (u, v) not in dist:
                    dist[(u, v)] = dist[(i, j)] + 1
                    nxt.append((u, v))
        frontier = nxt
    return dist


@pytest.mark.parametrize("torus", [True, False])
def test_second_order_matches_bfs(torus):
    n = 9
    c = contiguity(grid_domain(n, torus=torus), "rook", 3)
    for i0, j0 in [(4, 4), (0, 0), (0, 5)]:
        dist = bfs_orders(n, i0, j0, torus)
        row = c.order.getrow(i0 * n + j0).toarray().ravel()
        for (u, v), q in dist.items():
            assert row[u * n + v] == (q if 1 <= q <= 3 else 0)
    assert c.cumulative(2).getrow(4 * n + 4).nnz == 12


def test_nested_and_symmetric_orders():
    c = contiguity(grid_domain(12), "rook", 10)
    prev = None
    for q in range(1, 11):
        W = c.cumulative(q)
        assert (W - W.T).nnz == 0
        assert W.diagonal().sum() == 0
        if prev is not None:
            assert (prev - prev.multiply(W)).nnz == 0
        prev = W


def test_distance_contiguity_and_disconnected_warning():
    pts = [[0, 0], [1, 0], [2, 0], [10, 0]]
    d = build_domain(pts, np.ones(4))
    with pytest.warns(DisconnectedWarning):
        c = contiguity(d, "distance", 3, threshold=1.5)
    assert c.order[0, 2] == 2
    assert c.order[0, 3] == 0
