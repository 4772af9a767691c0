"""Masked grid lattices with first-order neighborhoods.

Sites are the active (unmasked) voxels of a 2-D or 3-D integer grid, indexed
0..n-1 in raster (C) order.  The neighborhood is first-order: 4 neighbors in
2-D, 6 in 3-D, with free (truncated) boundaries.  A parity two-coloring of
the grid graph supports block Gibbs updates: no two same-color sites are
adjacent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InactiveSite, LatticeMismatch


@dataclass
class Lattice:
    dims: tuple
    mask: np.ndarray
    coords: np.ndarray = field(init=False, repr=False)
    neighbor_idx: np.ndarray = field(init=False, repr=False)
    neighbor_count: np.ndarray = field(init=False, repr=False)
    colors: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)
    color_sites: tuple = field(init=False, repr=False)

    @classmethod
    def grid(cls, dims, mask=None) -> "Lattice":
        dims = tuple(int(d) for d in dims)
        if len(dims) not in (1, 2, 3) or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 1-3 positive extents, got {dims}")
        if mask is None:
            mask = np.ones(dims, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != dims:
                raise LatticeMismatch(f"mask shape {mask.shape} != dims {dims}")
        return cls(dims=dims, mask=mask)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.dims = tuple(int(d) for d in self.dims)
        coords = np.argwhere(self.mask)
        if coords.shape[0] == 0:
            raise ValueError("lattice has no active sites")
        self.coords = coords.astype(np.int32)
        n = coords.shape[0]
        nd = len(self.dims)
        site_of = -np.ones(self.dims, dtype=np.int64)
        site_of[self.mask] = np.arange(n)
        self._site_of = site_of

        max_deg = 2 * nd
        nb = -np.ones((n, max_deg), dtype=np.int64)
        slot = 0
        for axis in range(nd):
            for step in (-1, 1):
                shifted = coords.copy()
                shifted[:, axis] += step
                ok = (shifted[:, axis] >= 0) & (shifted[:, axis] < self.dims[axis])
                idx = np.full(n, -1, dtype=np.int64)
                idx[ok] = site_of[tuple(shifted[ok].T)]
                nb[:, slot] = idx
                slot += 1
        self.neighbor_idx = nb
        self.neighbor_count = (nb >= 0).sum(axis=1).astype(np.int64)
        self.colors = (coords.sum(axis=1) % 2).astype(np.int8)
        self.color_sites = (
            np.nonzero(self.colors == 0)[0],
            np.nonzero(self.colors == 1)[0],
        )
        # each edge once, (u, v) with u < v
        eu, ev = [], []
        for slot in range(max_deg):
            col = nb[:, slot]
            ok = col >= 0
            u = np.nonzero(ok)[0]
            v = col[ok]
            keep = u < v
            eu.append(u[keep])
            ev.append(v[keep])
        self.edges = np.stack(
            [np.concatenate(eu), np.concatenate(ev)], axis=1
        ).astype(np.int64) if eu else np.zeros((0, 2), dtype=np.int64)
        if self.edges.shape[0]:
            order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
            self.edges = self.edges[order]

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def site_at(self, coord) -> int:
        """Active-site index of the grid coordinate; InactiveSite if masked."""
        coord = tuple(int(c) for c in coord)
        if len(coord) != self.ndim or any(
            c < 0 or c >= d for c, d in zip(coord, self.dims)
        ):
            raise InactiveSite(f"coordinate {coord} outside grid {self.dims}")
        idx = int(self._site_of[coord])
        if idx < 0:
            raise InactiveSite(f"site {coord} is masked out")
        return idx

    def neighbors(self, site) -> np.ndarray:
        """Active neighbors of ``site`` (an active index or a grid coordinate)."""
        if np.ndim(site) > 0:
            site = self.site_at(site)
        site = int(site)
        if site < 0 or site >= self.n_sites:
            raise InactiveSite(f"no active site with index {site}")
        row = self.neighbor_idx[site]
        return row[row >= 0].copy()

    def matches(self, other: "Lattice") -> bool:
        return self.dims == other.dims and np.array_equal(self.mask, other.mask)

    def require_same(self, other: "Lattice") -> None:
        if not self.matches(other):
            raise LatticeMismatch("lattice geometry differs")

    def to_grid(self, values: np.ndarray, fill=0):
        """Scatter per-site values back onto the full grid."""
        values = np.asarray(values)
        out = np.full(self.dims, fill, dtype=values.dtype)
        out[self.mask] = values
        return out

    def from_grid(self, grid_values: np.ndarray) -> np.ndarray:
        grid_values = np.asarray(grid_values)
        if grid_values.shape != self.dims:
            raise LatticeMismatch(
                f"grid shape {grid_values.shape} != dims {self.dims}"
            )
        return grid_values[self.mask].copy()

    def pairwise_sq_distances(self) -> np.ndarray:
        d = self.coords[:, None, :].astype(np.int64) - self.coords[None, :, :]
        return (d * d).sum(axis=2)
