"""Discrete spatial domains: locations, areas, GFDM stars and contiguity."""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import (
    CoordinateOutOfRange,
    DimensionMismatch,
    DisconnectedWarning,
    DuplicateLocation,
    NonpositiveArea,
    TooFewLocations,
)

PLANAR = "planar"
TORUS = "torus"


@dataclass(frozen=True, eq=False)
class SpatialDomain:
    """Scattered locations with areas on a plane or a flat torus.

    Attributes
    ----------
    locations : (N, 2) float array
    areas : (N,) positive float array
    topology : ``"planar"`` or ``"torus"``
    width, height : torus periods (``None`` for planar domains)
    ids : tuple of per-location identifiers
    """

    locations: np.ndarray
    areas: np.ndarray
    topology: str = PLANAR
    width: float | None = None
    height: float | None = None
    ids: tuple = ()
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def is_torus(self) -> bool:
        return self.topology == TORUS

    @property
    def boxsize(self):
        return (self.width, self.height) if self.is_torus else None

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            tree = cKDTree(self.locations, boxsize=self.boxsize)
            object.__setattr__(self, "_tree", tree)
        return self._tree

    def displacement(self, i, j) -> np.ndarray:
        """Return ``z_i - z_j``, wrapped to the minimum image on a torus."""
        d = self.locations[np.asarray(i)] - self.locations[np.asarray(j)]
        return self.wrap(d)

    def wrap(self, d: np.ndarray) -> np.ndarray:
        if not self.is_torus:
            return d
        d = np.array(d, dtype=float, copy=True)
        period = np.array([self.width, self.height])
        d -= period * np.round(d / period)
        return d

    def total_area(self) -> float:
        return float(self.areas.sum())

    def distances_within(self, cutoff: float) -> sparse.coo_matrix:
        """Sparse matrix of pairwise distances ``<= cutoff`` (diagonal excluded)."""
        dist = self.tree.sparse_distance_matrix(self.tree, cutoff, output_type="coo_matrix")
        keep = dist.row != dist.col
        return sparse.coo_matrix(
            (dist.data[keep], (dist.row[keep], dist.col[keep])), shape=(self.n, self.n)
        )


def build_domain(points, areas, topology=PLANAR, width=None, height=None, ids=None) -> SpatialDomain:
    """Validate coordinates and areas and return a :class:`SpatialDomain`.

    Raises
    ------
    DuplicateLocation, NonpositiveArea, CoordinateOutOfRange
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        pts = pts.reshape(0, 2)
    a = np.asarray(areas, dtype=float).ravel()
    if pts.shape[1] != 2:
        raise DimensionMismatch(f"points must have two columns, got shape {pts.shape}")
    if pts.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"{pts.shape[0]} points but {a.shape[0]} areas")
    if not np.all(np.isfinite(pts)):
        raise CoordinateOutOfRange("non-finite coordinate")
    if np.any(~(a > 0)):
        bad = int(np.flatnonzero(~(a > 0))[0])
        raise NonpositiveArea(f"area of location {bad} is {a[bad]!r}")

    if topology == TORUS:
        if width is None or height is None or width <= 0 or height <= 0:
            raise CoordinateOutOfRange("torus domains need positive width and height")
        inside = (pts[:, 0] >= 0) & (pts[:, 0] < width) & (pts[:, 1] >= 0) & (pts[:, 1] < height)
        if not inside.all():
            bad = int(np.flatnonzero(~inside)[0])
            raise CoordinateOutOfRange(f"location {bad} at {pts[bad]} outside [0,{width})x[0,{height})")
        width, height = float(width), float(height)
    elif topology == PLANAR:
        width = height = None
    else:
        raise ValueError(f"unknown topology {topology!r}")

    if len(pts) > 1:
        _, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup = pts[first[np.argmax(counts > 1)]]
            raise DuplicateLocation(f"location {dup} appears {counts.max()} times")

    if ids is None:
        ids = tuple(str(i) for i in range(len(pts)))
    else:
        ids = tuple(str(i) for i in ids)
        if len(ids) != len(pts):
            raise DimensionMismatch("ids length does not match points")
    return SpatialDomain(pts, a, topology, width, height, ids)


def grid_domain(nx, ny=None, width=1.0, height=1.0, torus=True) -> SpatialDomain:
    """Cell centres of a regular ``nx`` x ``ny`` partition of a rectangle.

    Location ``k`` is cell ``(ix, iy) = (k // ny, k % ny)``, i.e. x-major order.
    """
    ny = nx if ny is None else ny
    dx, dy = width / nx, height / ny
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    pts = np.column_stack([(ix.ravel() + 0.5) * dx, (iy.ravel() + 0.5) * dy])
    areas = np.full(nx * ny, dx * dy)
    return build_domain(pts, areas, TORUS if torus else PLANAR, width, height)


@dataclass(frozen=True)
class Star:
    """The ``n_s`` nearest neighbours of one location.

    ``offsets[k] = z(center) - z(members[k])`` (wrapped on a torus).
    """

    center: int
    members: np.ndarray
    offsets: np.ndarray
    dm: float


class StarSet(Sequence):
    """Stars of every location, stored as stacked arrays."""

    def __init__(self, members: np.ndarray, offsets: np.ndarray):
        self.members = members
        self.offsets = offsets
        self.dm = np.sqrt((offsets**2).sum(axis=2)).max(axis=1)

    @property
    def n_s(self) -> int:
        return self.members.shape[1]

    def __len__(self):
        return self.members.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return Star(int(i), self.members[i], self.offsets[i], float(self.dm[i]))


def build_stars(domain: SpatialDomain, n_s: int = 8) -> StarSet:
    """Closest-neighbourhood stars of size ``n_s`` for every location.

    Distance ties are broken by ascending location index; distances that
    agree to 1e-9 of the star radius count as ties, so that round-off in
    the coordinates cannot reorder symmetric neighbours.
    """
    n = domain.n
    if n_s < 1:
        raise ValueError("n_s must be positive")
    if n < n_s + 1:
        raise TooFewLocations(f"need at least {n_s + 1} locations for stars of size {n_s}, got {n}")

    k = min(n, n_s + 1 + max(8, n_s))
    while True:
        dist, idx = domain.tree.query(domain.locations, k=k)
        dist = np.atleast_2d(dist)
        idx = np.atleast_2d(idx)
        # a tie at the cut-off could extend past the candidate list
        cut = np.sort(dist, axis=1)[:, n_s]
        if k == n or np.all(dist[:, -1] > cut * (1 + 1e-9) + 1e-300):
            break
        k = min(n, 2 * k)

    members = np.empty((n, n_s), dtype=np.int64)
    for i in range(n):
        d, j = dist[i], idx[i]
        mask = j != i
        d, j = d[mask], j[mask]
        scale = d.max() if d.size else 1.0
        q = np.round(d / (scale * 1e-9))
        order = np.lexsort((j, q))
        members[i] = j[order[:n_s]]

    centers = np.repeat(np.arange(n), n_s)
    offsets = domain.displacement(centers, members.ravel()).reshape(n, n_s, 2)
    return StarSet(members, offsets)


@dataclass(frozen=True)
class ContiguityStructure:
    """Nested contiguity sets as a sparse matrix of hop orders.

    ``order[i, j] = q`` when ``j`` is reachable from ``i`` in exactly ``q``
    contiguity hops (``q <= max_order``); unreachable pairs and the diagonal
    are absent.
    """

    order: sparse.csr_matrix
    max_order: int

    @property
    def n(self) -> int:
        return self.order.shape[0]

    def cumulative(self, q: int) -> sparse.csr_matrix:
        """Binary ``W_q``: pairs within ``q`` hops."""
        if q <= 0:
            return sparse.csr_matrix((self.n, self.n))
        m = self.order.copy()
        m.data = ((m.data >= 1) & (m.data <= q)).astype(float)
        m.eliminate_zeros()
        return m

    def band(self, q: int) -> sparse.csr_matrix:
        """Binary ring ``W_q - W_{q-1}``: pairs exactly ``q`` hops apart."""
        m = self.order.copy()
        m.data = (m.data == q).astype(float)
        m.eliminate_zeros()
        return m


def first_order_adjacency(domain: SpatialDomain, method="rook", threshold=None) -> sparse.csr_matrix:
    """Binary first-order contiguity.

    ``rook`` links pairs at the minimum inter-location distance (the four
    edge-sharing cells of a regular grid); ``distance`` links every pair
    closer than ``threshold``.
    """
    if method == "rook":
        if domain.n < 2:
            return sparse.csr_matrix((domain.n, domain.n))
        d, _ = domain.tree.query(domain.locations, k=2)
        spacing = d[:, 1].min()
        cutoff = spacing * (1 + 1e-6)
    elif method == "distance":
        if threshold is None or threshold <= 0:
            raise ValueError("distance contiguity needs a positive threshold")
        cutoff = float(threshold)
    else:
        raise ValueError(f"unknown contiguity method {method!r}")
    adj = domain.distances_within(cutoff).tocsr()
    adj.data[:] = 1.0
    adj = ((adj + adj.T) > 0).astype(float)
    return sparse.csr_matrix(adj)


def contiguity(domain: SpatialDomain, method="rook", max_order=1, threshold=None) -> ContiguityStructure:
    """Contiguity orders ``1..max_order`` by breadth-first expansion."""
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    adj = first_order_adjacency(domain, method, threshold)
    n = domain.n
    reached = (adj + sparse.identity(n, format="csr")).astype(bool).astype(float)
    order = adj.copy()
    frontier = adj
    for q in range(2, max_order + 1):
        step = ((frontier @ adj) > 0).astype(float)
        new = step - step.multiply(reached)
        new.eliminate_zeros()
        if new.nnz == 0:
            break
        order = order + new * q
        reached = reached + new
        frontier = new

    if n > 1:
        ncomp, _ = csgraph.connected_components(adj, directed=False)
        if ncomp > 1:
            warnings.warn(f"contiguity graph has {ncomp} components", DisconnectedWarning, stacklevel=2)
    order = sparse.csr_matrix(order)
    order.setdiag(0)
    order.eliminate_zeros()
    return ContiguityStructure(order, int(max_order))
