"""Hierarchical weighted Potts label model.

Subject labels g_iv and group labels h_xv live on a shared lattice with K
components.  Full conditionals:

    P(g_iv = k | .) ~ exp[ -k^xi + beta * #{u in N_v : g_iu = k}
                           + alpha * 1(h_{x_i v} = k) ]
    P(h_xv = k | .) ~ exp[ beta * #{u in N_v : h_xu = k}
                           + alpha * #{j : x_j = x, g_jv = k} ]

The joint log energy attaches the -g_iv^xi offset once per site, which is the
unique placement consistent with the conditionals above on irregular (masked)
lattices.  Labels are 1-based so the offset of component k is exactly -k^xi.

Sweeps visit each layer in a fixed color-blocked order (all parity-0 sites of
a layer simultaneously, then parity-1; subject layers first, then both group
layers), which realizes the same single-site kernels as a sequential scan
because same-color sites are never adjacent.  A sequential random-scan
variant is available behind ``order="random"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Lattice

ALPHA_MAX = 20.0
BETA_MAX = 20.0
XI_MAX = 1.0


@dataclass(frozen=True)
class PottsHyper:
    """Group-coupling alpha, spatial beta, concentration xi."""

    alpha: float
    beta: float
    xi: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "xi", float(self.xi))
        if not (0.0 <= self.alpha <= ALPHA_MAX):
            raise ValueError(f"alpha outside [0, {ALPHA_MAX}]: {self.alpha}")
        if not (0.0 <= self.beta <= BETA_MAX):
            raise ValueError(f"beta outside [0, {BETA_MAX}]: {self.beta}")
        if not (0.0 <= self.xi <= XI_MAX):
            raise ValueError(f"xi outside [0, {XI_MAX}]: {self.xi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.xi])


def label_offsets(K: int, xi: float) -> np.ndarray:
    """Per-component offsets eta_k = -k^xi for k = 1..K."""
    return -(np.arange(1, K + 1, dtype=float) ** xi)


@dataclass
class LabelField:
    """Subject labels g (N layers), group labels h (2 layers), 1..K."""

    K: int
    g: np.ndarray
    h: np.ndarray
    group_of: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.int32)
        self.h = np.asarray(self.h, dtype=np.int32)
        self.group_of = np.asarray(self.group_of, dtype=np.int8)
        if self.g.ndim != 2 or self.h.shape != (2, self.g.shape[1]):
            raise ValueError("g must be (N, n) and h must be (2, n)")
        if self.group_of.shape != (self.g.shape[0],):
            raise ValueError("group_of must have one entry per subject")
        if not np.isin(self.group_of, [0, 1]).all():
            raise ValueError("group indicators must be 0 or 1")
        for arr in (self.g, self.h):
            if arr.min() < 1 or arr.max() > self.K:
                raise ValueError(f"labels must lie in 1..{self.K}")

    @property
    def n_subjects(self) -> int:
        return self.g.shape[0]

    @property
    def n_sites(self) -> int:
        return self.g.shape[1]

    def copy(self) -> "LabelField":
        return LabelField(self.K, self.g.copy(), self.h.copy(), self.group_of.copy())

    @classmethod
    def uniform_random(cls, lattice: Lattice, K: int, group_of, rng) -> "LabelField":
        group_of = np.asarray(group_of, dtype=np.int8)
        n = lattice.n_sites
        g = rng.integers(1, K + 1, size=(group_of.shape[0], n), dtype=np.int32)
        h = rng.integers(1, K + 1, size=(2, n), dtype=np.int32)
        return cls(K, g, h, group_of)

    @classmethod
    def constant(cls, lattice: Lattice, K: int, group_of, value: int = 1):
        group_of = np.asarray(group_of, dtype=np.int8)
        n = lattice.n_sites
        g = np.full((group_of.shape[0], n), value, dtype=np.int32)
        h = np.full((2, n), value, dtype=np.int32)
        return cls(K, g, h, group_of)


def _neighbor_labels(layer: np.ndarray, lattice: Lattice, sites: np.ndarray):
    """Labels of the neighbors of ``sites``; 0 marks padding slots."""
    nb = lattice.neighbor_idx[sites]
    safe = np.where(nb >= 0, nb, 0)
    vals = layer[..., safe]
    return np.where(nb >= 0, vals, 0)


def _site_g_log_weights(labels, lattice, theta, i, v, loglik_iv=None):
    K = labels.K
    nb = lattice.neighbors(v)
    counts = np.bincount(labels.g[i, nb], minlength=K + 1)[1:].astype(float)
    lw = label_offsets(K, theta.xi) + theta.beta * counts
    lw[labels.h[labels.group_of[i], v] - 1] += theta.alpha
    if loglik_iv is not None:
        lw = lw + loglik_iv
    return lw


def _site_h_log_weights(labels, lattice, theta, x, v):
    K = labels.K
    nb = lattice.neighbors(v)
    counts = np.bincount(labels.h[x, nb], minlength=K + 1)[1:].astype(float)
    members = labels.g[labels.group_of == x, v]
    gcounts = np.bincount(members, minlength=K + 1)[1:].astype(float)
    return theta.beta * counts + theta.alpha * gcounts


def _normalize(logw: np.ndarray) -> np.ndarray:
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def subject_label_conditional(
    labels: LabelField, lattice: Lattice, theta: PottsHyper, i: int, v: int,
) -> np.ndarray:
    """Full-conditional probabilities of g_iv over components 1..K."""
    return _normalize(_site_g_log_weights(labels, lattice, theta, i, v))


def group_label_conditional(
    labels: LabelField, lattice: Lattice, theta: PottsHyper, x: int, v: int,
) -> np.ndarray:
    """Full-conditional probabilities of h_xv over components 1..K."""
    return _normalize(_site_h_log_weights(labels, lattice, theta, x, v))


def joint_log_energy(labels: LabelField, lattice: Lattice, theta: PottsHyper) -> float:
    """Unnormalized joint log-PMF U(g, h, theta); each edge counted once."""
    align = int((labels.g == labels.h[labels.group_of]).sum())
    if lattice.edges.shape[0]:
        eu, ev = lattice.edges[:, 0], lattice.edges[:, 1]
        g_edges = int((labels.g[:, eu] == labels.g[:, ev]).sum())
        h_edges = int((labels.h[:, eu] == labels.h[:, ev]).sum())
    else:
        g_edges = h_edges = 0
    powers = np.arange(1, labels.K + 1, dtype=float) ** theta.xi
    offset = float(powers[labels.g - 1].sum())
    return theta.alpha * align + theta.beta * (g_edges + h_edges) - offset


def _draw_categorical(logw: np.ndarray, rng) -> np.ndarray:
    """Sample 1-based labels from log-weights along the last axis."""
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    total = w.sum(axis=-1)
    cdf = np.cumsum(w, axis=-1)
    u = rng.random(total.shape) * total
    out = np.asarray((u[..., None] >= cdf).sum(axis=-1) + 1, dtype=np.int32)
    out = np.minimum(out, logw.shape[-1])
    bad = ~np.isfinite(total) | (total <= 0.0)
    if np.any(bad):
        # defined fallback when every weight underflows: max-log-weight label
        out[bad] = np.argmax(logw[bad], axis=-1).astype(np.int32) + 1
    return out


def _update_g_color(labels, lattice, theta, sites, rng, loglik=None):
    K = labels.K
    kvals = np.arange(1, K + 1, dtype=np.int32)
    gnb = _neighbor_labels(labels.g, lattice, sites)  # (N, n_c, deg)
    counts = (gnb[..., None] == kvals).sum(axis=2)
    lw = label_offsets(K, theta.xi)[None, None, :] + theta.beta * counts
    halign = labels.h[labels.group_of][:, sites]
    lw += theta.alpha * (halign[..., None] == kvals)
    if loglik is not None:
        lw = lw + loglik[:, sites, :]
    labels.g[:, sites] = _draw_categorical(lw, rng)


def _update_h_color(labels, lattice, theta, sites, rng):
    K = labels.K
    kvals = np.arange(1, K + 1, dtype=np.int32)
    hnb = _neighbor_labels(labels.h, lattice, sites)  # (2, n_c, deg)
    counts = (hnb[..., None] == kvals).sum(axis=2)
    lw = theta.beta * counts.astype(float)
    for x in (0, 1):
        members = labels.g[labels.group_of == x][:, sites]
        if members.shape[0]:
            gcounts = (members[..., None] == kvals).sum(axis=0)
            lw[x] += theta.alpha * gcounts
    labels.h[:, sites] = _draw_categorical(lw, rng)


def _sweep_random_scan(labels, lattice, theta, rng, loglik=None):
    n = lattice.n_sites
    for i in range(labels.n_subjects):
        for v in rng.permutation(n):
            lw = _site_g_log_weights(
                labels, lattice, theta, i, v,
                None if loglik is None else loglik[i, v],
            )
            labels.g[i, v] = _draw_categorical(lw, rng)
    for x in (0, 1):
        for v in rng.permutation(n):
            lw = _site_h_log_weights(labels, lattice, theta, x, v)
            labels.h[x, v] = _draw_categorical(lw, rng)
    return labels


def sweep_labels(
    labels: LabelField,
    lattice: Lattice,
    theta: PottsHyper,
    rng: np.random.Generator,
    *,
    loglik: np.ndarray | None = None,
    order: str = "systematic",
) -> LabelField:
    """One full sweep over every g_iv and every h_xv (in place).

    ``loglik`` of shape (N, n, K) adds per-site data log-likelihood terms to
    the subject-label conditionals; with ``loglik=None`` this is exactly the
    label-prior sweep.  Group layers are updated after all subject layers.
    """
    if order == "random":
        return _sweep_random_scan(labels, lattice, theta, rng, loglik)
    if order != "systematic":
        raise ValueError(f"unknown sweep order {order!r}")
    for sites in lattice.color_sites:
        if sites.size:
            _update_g_color(labels, lattice, theta, sites, rng, loglik)
    for sites in lattice.color_sites:
        if sites.size:
            _update_h_color(labels, lattice, theta, sites, rng)
    return labels


def gibbs_sweep_prior(
    labels: LabelField,
    lattice: Lattice,
    theta: PottsHyper,
    rng: np.random.Generator,
    *,
    order: str = "systematic",
) -> LabelField:
    """Label-prior Gibbs sweep (no data likelihood)."""
    return sweep_labels(labels, lattice, theta, rng, loglik=None, order=order)
