"""Matrix-variate variograms.

The model variogram separates into a non-spatial factor gamma(m, nu, Sigma)
(closed form from Wishart/inverse-Wishart trace moments) and a spatial factor
P(g_iu != g_jv | theta) estimated by Monte Carlo over label-prior Gibbs runs.
The empirical estimator averages squared Frobenius differences over all site
pairs at each exact Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, InvalidDof, LatticeMismatch
from .field import TensorField
from .lattice import Lattice
from .potts import LabelField, PottsHyper, gibbs_sweep_prior

DEFAULT_PAIR_CAP = 1_000_000


@dataclass
class VariogramCurve:
    """Values over sorted distances, with the pair counts actually used."""

    distances: np.ndarray
    values: np.ndarray
    pair_counts: np.ndarray
    std_errors: np.ndarray | None = None

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.pair_counts = np.asarray(self.pair_counts, dtype=np.int64)
        if not (
            self.distances.shape == self.values.shape == self.pair_counts.shape
        ):
            raise ValueError("distances, values, pair_counts must share a shape")
        if np.any(np.diff(self.distances) <= 0):
            raise ValueError("distances must be strictly increasing")

    def to_rows(self):
        return list(zip(self.distances, self.values, self.pair_counts))


def _displacements(lattice: Lattice, max_dist: float, half: bool):
    """Nonzero integer displacement vectors with |d| <= max_dist.

    ``half=True`` returns one representative per +/- pair (for i = j, where
    ordered pairs mirror each other); ``half=False`` returns all of them.
    """
    nd = lattice.ndim
    lim = int(np.floor(max_dist))
    ranges = [np.arange(-lim, lim + 1)] * nd
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, nd)
    sq = (grid**2).sum(axis=1)
    keep = (sq > 0) & (sq <= max_dist**2 + 1e-9)
    grid = grid[keep]
    if half:
        first_nonzero = np.argmax(grid != 0, axis=1)
        sign = grid[np.arange(len(grid)), first_nonzero]
        grid = grid[sign > 0]
    return grid


def _pairs_for_displacement(lattice: Lattice, delta):
    """Ordered active-site pairs (u, u+delta)."""
    shifted = lattice.coords + np.asarray(delta, dtype=np.int64)
    ok = np.ones(lattice.n_sites, dtype=bool)
    for axis in range(lattice.ndim):
        ok &= (shifted[:, axis] >= 0) & (shifted[:, axis] < lattice.dims[axis])
    u = np.nonzero(ok)[0]
    v = lattice._site_of[tuple(shifted[u].T)]
    active = v >= 0
    return u[active], v[active]


def empirical_variogram(
    field_i: TensorField,
    field_j: TensorField,
    max_dist: float,
    *,
    max_pairs_per_bin: int = DEFAULT_PAIR_CAP,
    rng: np.random.Generator | None = None,
) -> VariogramCurve:
    """Mean squared Frobenius difference per exact inter-site distance.

    With ``field_i is field_j`` this is the individual variogram (distance 0
    excluded); otherwise the inter-subject variogram, which includes the
    same-voxel pairs at distance 0.  Bins holding more than
    ``max_pairs_per_bin`` ordered pairs are subsampled uniformly;
    ``pair_counts`` reports the evaluations actually used.
    """
    lattice = field_i.lattice
    lattice.require_same(field_j.lattice)
    if field_i.p != field_j.p:
        raise LatticeMismatch("fields have differing matrix dimension")
    same = field_i is field_j
    flat_i = field_i.tensors.reshape(lattice.n_sites, -1)
    flat_j = field_j.tensors.reshape(lattice.n_sites, -1)
    if rng is None:
        rng = np.random.default_rng(0)

    groups: dict[int, list] = {}
    for delta in _displacements(lattice, max_dist, half=same):
        sq = int((np.asarray(delta) ** 2).sum())
        groups.setdefault(sq, []).append(delta)
    if not same:
        groups.setdefault(0, []).append(np.zeros(lattice.ndim, dtype=np.int64))

    sq_dists, values, counts = [], [], []
    for sq in sorted(groups):
        us, vs = [], []
        for delta in groups[sq]:
            if sq == 0:
                u = v = np.arange(lattice.n_sites)
            else:
                u, v = _pairs_for_displacement(lattice, delta)
            us.append(u)
            vs.append(v)
        u = np.concatenate(us)
        v = np.concatenate(vs)
        if u.size == 0:
            continue
        if u.size > max_pairs_per_bin:
            pick = rng.choice(u.size, size=max_pairs_per_bin, replace=False)
            u, v = u[pick], v[pick]
        diff = flat_i[u] - flat_j[v]
        sq_dists.append(sq)
        values.append(float((diff**2).sum(axis=1).mean()))
        counts.append(u.size)

    if not sq_dists:
        raise EmptyData("no site pairs within max_dist")
    return VariogramCurve(
        np.sqrt(np.array(sq_dists, dtype=float)),
        np.array(values),
        np.array(counts, dtype=np.int64),
    )


def gamma_nonspatial(m: float, nu: float, sigma) -> float:
    """Non-spatial variogram factor from Wishart trace moments.

    Equals E||A_a - A_b||_F^2 for independent atoms V_a, V_b ~ W_p(Sigma, nu)
    and A_x | V_x ~ IW_p(V_x, m).  Requires m > p + 3 and nu > p.
    """
    sigma = np.asarray(getattr(sigma, "matrix", sigma), dtype=float)
    p = sigma.shape[0]
    if not m > p + 3:
        raise InvalidDof(f"m must exceed p+3={p + 3} for finite second moments")
    if not nu > p:
        raise InvalidDof(f"nu must exceed p={p}")
    ev = np.linalg.eigvalsh(sigma)
    sum_sq = float((ev**2).sum())  # trace of Sigma^2
    trace_sq = float(ev.sum() ** 2)  # squared trace
    c2 = 1.0 / ((m - p) * (m - p - 1) * (m - p - 3))
    c1 = (m - p - 2) * c2
    second_moment = (
        (c1 + c2) * ((nu + 1.0) / nu * sum_sq + trace_sq / nu)
        + c2 * (2.0 * sum_sq / nu + trace_sq)
    ) * (m - p - 1) ** 2
    cross = sum_sq
    return 2.0 * (second_moment - cross)


def pairs_at_distances(lattice: Lattice, distances, *, cap=10_000, rng=None):
    """Site pairs grouped so every requested Euclidean distance is realized."""
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for d in distances:
        found_u, found_v = [], []
        for delta in _displacements(lattice, d, half=True):
            if abs(float((np.asarray(delta) ** 2).sum()) - d * d) > 1e-9:
                continue
            u, v = _pairs_for_displacement(lattice, delta)
            found_u.append(u)
            found_v.append(v)
        if not found_u:
            continue
        u = np.concatenate(found_u)
        v = np.concatenate(found_v)
        if u.size > cap:
            pick = rng.choice(u.size, size=cap, replace=False)
            u, v = u[pick], v[pick]
        out.extend(zip(u.tolist(), v.tolist()))
    return out


def spatial_term_mc(
    lattice: Lattice,
    theta: PottsHyper,
    K: int,
    N: int,
    pairs,
    *,
    role: str = "individual",
    burn_in: int = 500,
    sweeps: int = 2000,
    replications: int = 20,
    rng: np.random.Generator | None = None,
) -> VariogramCurve:
    """Monte Carlo estimate of P(g_iu != g_jv) under the label prior.

    Each replication restarts the Gibbs runs from uniform random labels, so
    with strong coupling the estimate reflects the finite-run behavior of the
    approximation rather than the (practically unreachable) stationary law.
    ``role`` selects the subject pair: ``individual`` (i = j), ``within``
    (i != j, same group), or ``between`` (different groups).  ``std_errors``
    holds the across-replication standard error per distance bin.
    """
    if role not in ("individual", "within", "between"):
        raise ValueError(f"unknown role {role!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    group_of = np.zeros(N, dtype=np.int8)
    group_of[(N + 1) // 2 :] = 1
    if role == "individual":
        subj_i = subj_j = 0
    elif role == "within":
        if (group_of == 0).sum() < 2:
            raise ValueError("within-group role needs at least 2 subjects per group")
        subj_i, subj_j = 0, 1
    else:
        if group_of.max() == 0:
            raise ValueError("between-group role needs subjects in both groups")
        subj_i, subj_j = 0, N - 1

    pairs = np.asarray(list(pairs), dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be a list of (u, v) site pairs")
    du = lattice.coords[pairs[:, 0]].astype(np.int64)
    dv = lattice.coords[pairs[:, 1]].astype(np.int64)
    sq = ((du - dv) ** 2).sum(axis=1)
    bins = np.unique(sq)
    bin_of = np.searchsorted(bins, sq)
    n_bins = bins.size

    rep_means = np.zeros((replications, n_bins))
    pair_counts = np.bincount(bin_of, minlength=n_bins).astype(np.int64)
    for r in range(replications):
        labels = LabelField.uniform_random(lattice, K, group_of, rng)
        for _ in range(burn_in):
            gibbs_sweep_prior(labels, lattice, theta, rng)
        acc = np.zeros(n_bins)
        for _ in range(sweeps):
            gibbs_sweep_prior(labels, lattice, theta, rng)
            diff = labels.g[subj_i, pairs[:, 0]] != labels.g[subj_j, pairs[:, 1]]
            acc += np.bincount(bin_of, weights=diff.astype(float), minlength=n_bins)
        rep_means[r] = acc / (sweeps * pair_counts)
    values = rep_means.mean(axis=0)
    if replications > 1:
        stderr = rep_means.std(axis=0, ddof=1) / np.sqrt(replications)
    else:
        stderr = np.zeros(n_bins)
    return VariogramCurve(
        np.sqrt(bins.astype(float)),
        values,
        pair_counts * sweeps * replications,
        std_errors=stderr,
    )


def model_variogram(m, nu, sigma, spatial_curve: VariogramCurve) -> VariogramCurve:
    """Separable model variogram: gamma(m, nu, Sigma) times the spatial term."""
    vals = np.asarray(spatial_curve.values, dtype=float)
    if np.any(vals < 0) or np.any(vals > 1):
        raise ValueError("spatial term values must lie in [0, 1]")
    g = gamma_nonspatial(m, nu, sigma)
    return VariogramCurve(
        spatial_curve.distances.copy(),
        g * vals,
        spatial_curve.pair_counts.copy(),
        std_errors=None
        if spatial_curve.std_errors is None
        else g * spatial_curve.std_errors,
    )
