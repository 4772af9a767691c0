"""Posterior sampler: conjugate Gibbs for atoms, likelihood-weighted label
Gibbs, log-normal random-walk Metropolis for the degrees of freedom, and
double Metropolis-Hastings for the Potts hyperparameters.

Per iteration: update_labels -> update_atoms -> update_dof -> update_theta_dmh.
The atom full conditional is the conjugate form
W_p((Sigma^{-1} nu + (m-p-1) sum A^{-1})^{-1} (n_k m + nu), n_k m + nu) with
n_k counting assigned voxels over all subjects; set
``FitConfig.printed_atom_dof`` to scale the dof term by the subject count
instead (compatibility with an alternative published form).

Everything is driven by one numpy Generator seeded from the config, consumed
in a fixed order, so a run is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.special import expit, logit, multigammaln

from .errors import EmptyTrace
from .field import TensorField, estimate_sigma
from .lattice import Lattice
from .potts import (
    ALPHA_MAX,
    BETA_MAX,
    LabelField,
    PottsHyper,
    joint_log_energy,
    gibbs_sweep_prior,
    sweep_labels,
)
from .spd import WishartParams, wishart_sample

_LOG2 = float(np.log(2.0))

M_BOX = (5.0, 50.0)
NU_BOX = (4.0, 50.0)


@dataclass
class RwScales:
    """Random-walk step sizes on the log (logit for xi) scale."""

    m: float = 0.1
    nu: float = 0.1
    alpha: float = 0.1
    beta: float = 0.1
    xi: float = 0.1

    def validate(self):
        for name in ("m", "nu", "alpha", "beta", "xi"):
            if getattr(self, name) < 0:
                raise ValueError(f"rw scale {name} must be >= 0")


@dataclass
class FitConfig:
    K: int
    iterations: int = 8000
    burn_in: int = 3000
    seed: int = 0
    rw_scales: RwScales = dc_field(default_factory=RwScales)
    dmh_inner_sweeps: int = 5
    thin: int = 50
    adapt: bool = True
    printed_atom_dof: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.dmh_inner_sweeps < 1:
            raise ValueError("thin and dmh_inner_sweeps must be >= 1")
        if isinstance(self.rw_scales, dict):
            self.rw_scales = RwScales(**self.rw_scales)
        self.rw_scales.validate()

    def to_dict(self):
        return {
            "K": self.K,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "rw_scales": vars(self.rw_scales).copy(),
            "dmh_inner_sweeps": self.dmh_inner_sweeps,
            "thin": self.thin,
            "adapt": self.adapt,
            "printed_atom_dof": self.printed_atom_dof,
        }


@dataclass
class ModelState:
    """Current MCMC state of all sampled quantities plus the fixed Sigma."""

    atoms: np.ndarray
    labels: LabelField
    m: float
    nu: float
    theta: PottsHyper
    sigma: np.ndarray

    def validate(self):
        p = self.sigma.shape[0]
        if self.atoms.shape != (self.labels.K, p, p):
            raise ValueError("atoms must be (K, p, p)")
        if not (M_BOX[0] <= self.m <= M_BOX[1]):
            raise ValueError(f"m outside {M_BOX}")
        if not (NU_BOX[0] <= self.nu <= NU_BOX[1]):
            raise ValueError(f"nu outside {NU_BOX}")


@dataclass
class FieldData:
    """Stacked per-dataset arrays shared by all updates."""

    lattice: Lattice
    tensors: np.ndarray  # (N, n, p, p)
    inv_tensors: np.ndarray
    logdet_tensors: np.ndarray  # (N, n)
    group_of: np.ndarray
    subject_ids: list

    @classmethod
    def from_fields(cls, fields) -> "FieldData":
        fields = list(fields)
        lattice = fields[0].lattice
        p = fields[0].p
        for f in fields[1:]:
            lattice.require_same(f.lattice)
            if f.p != p:
                raise ValueError("fields have differing matrix dimension")
        tensors = np.stack([f.tensors for f in fields])
        chol = np.linalg.cholesky(tensors)
        logdet = 2.0 * np.log(
            chol[..., np.arange(p), np.arange(p)]
        ).sum(axis=-1)
        inv = np.linalg.inv(tensors)
        inv = 0.5 * (inv + inv.transpose(0, 1, 3, 2))
        return cls(
            lattice=lattice,
            tensors=tensors,
            inv_tensors=inv,
            logdet_tensors=logdet,
            group_of=np.array([f.group for f in fields], dtype=np.int8),
            subject_ids=[f.subject_id for f in fields],
        )

    @property
    def n_subjects(self) -> int:
        return self.tensors.shape[0]

    @property
    def n_sites(self) -> int:
        return self.tensors.shape[1]

    @property
    def p(self) -> int:
        return self.tensors.shape[-1]


def invwishart_loglik_matrix(data: FieldData, atoms: np.ndarray, m: float):
    """Log IW_p(A_iv | V_k, m) for every voxel and component, shape (N, n, K)."""
    p = data.p
    spread = m - p - 1.0
    chol = np.linalg.cholesky(atoms)
    logdet_atoms = 2.0 * np.log(chol[:, np.arange(p), np.arange(p)]).sum(axis=1)
    tr = np.einsum("ivab,kab->ivk", data.inv_tensors, atoms)
    const = 0.5 * m * p * np.log(spread) - 0.5 * m * p * _LOG2 - multigammaln(
        0.5 * m, p
    )
    return (
        const
        + 0.5 * m * logdet_atoms[None, None, :]
        - 0.5 * (m + p + 1) * data.logdet_tensors[..., None]
        - 0.5 * spread * tr
    )


def update_labels(state: ModelState, data: FieldData, rng) -> ModelState:
    """One likelihood-weighted sweep of all g layers, then all h layers."""
    loglik = invwishart_loglik_matrix(data, state.atoms, state.m)
    sweep_labels(state.labels, data.lattice, state.theta, rng, loglik=loglik)
    return state


def update_atoms(
    state: ModelState, data: FieldData, rng, *, printed_dof: bool = False
) -> ModelState:
    """Redraw every atom from its conjugate Wishart full conditional."""
    K = state.labels.K
    p = data.p
    m, nu = state.m, state.nu
    flat_labels = state.labels.g.ravel() - 1
    inv_flat = data.inv_tensors.reshape(-1, p * p)
    counts = np.bincount(flat_labels, minlength=K)
    scatter = np.zeros((K, p * p))
    for col in range(p * p):
        scatter[:, col] = np.bincount(
            flat_labels, weights=inv_flat[:, col], minlength=K
        )
    scatter = scatter.reshape(K, p, p)
    sigma_inv = np.linalg.inv(state.sigma)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    n_subjects = data.n_subjects
    for k in range(K):
        if counts[k] == 0:
            params = WishartParams(state.sigma, nu)
        else:
            dof = counts[k] * m + nu
            if printed_dof:
                dof = n_subjects * counts[k] * m + nu
            precision = sigma_inv * nu + (m - p - 1.0) * scatter[k]
            mean = dof * np.linalg.inv(precision)
            mean = 0.5 * (mean + mean.T)
            params = WishartParams(mean, dof)
        state.atoms[k] = wishart_sample(params, rng)
    return state


def _dof_loglik_m(data: FieldData, state: ModelState, m: float) -> float:
    """Sum of IW log densities of all tensors at dof m (labels, atoms fixed)."""
    p = data.p
    idx = state.labels.g - 1
    chol = np.linalg.cholesky(state.atoms)
    logdet_atoms = 2.0 * np.log(chol[:, np.arange(p), np.arange(p)]).sum(axis=1)
    t_logdet_v = float(logdet_atoms[idx].sum())
    t_logdet_a = float(data.logdet_tensors.sum())
    t_trace = float(
        np.einsum("ivab,ivab->", data.inv_tensors, state.atoms[idx])
    )
    count = idx.size
    spread = m - p - 1.0
    return (
        0.5 * m * (count * p * np.log(spread) + t_logdet_v)
        - 0.5 * (m + p + 1) * t_logdet_a
        - 0.5 * spread * t_trace
        - count * (0.5 * m * p * _LOG2 + multigammaln(0.5 * m, p))
    )


def _dof_loglik_nu(state: ModelState, nu: float) -> float:
    """Sum of Wishart log densities of the atoms at dof nu."""
    K, p, _ = state.atoms.shape
    chol_atoms = np.linalg.cholesky(state.atoms)
    logdet_atoms = 2.0 * np.log(
        chol_atoms[:, np.arange(p), np.arange(p)]
    ).sum(axis=1)
    sigma_inv = np.linalg.inv(state.sigma)
    logdet_sigma = float(np.linalg.slogdet(state.sigma)[1])
    t_trace = float(np.einsum("ab,kab->", sigma_inv, state.atoms))
    return (
        0.5 * (nu - p - 1) * float(logdet_atoms.sum())
        - 0.5 * nu * t_trace
        - K
        * (
            0.5 * nu * p * _LOG2
            + 0.5 * nu * (logdet_sigma - p * np.log(nu))
            + multigammaln(0.5 * nu, p)
        )
    )


def update_dof(
    state: ModelState,
    data: FieldData,
    rng,
    *,
    scales: RwScales | None = None,
    stats: dict | None = None,
) -> ModelState:
    """Log-normal random-walk Metropolis steps for m, then nu."""
    scales = scales or RwScales()
    p = data.p

    prop = state.m * np.exp(scales.m * rng.standard_normal())
    u = rng.random()
    if M_BOX[0] <= prop <= M_BOX[1] and prop > p + 1:
        log_r = (
            _dof_loglik_m(data, state, prop)
            - _dof_loglik_m(data, state, state.m)
            + np.log(prop / state.m)
        )
        if np.log(u) < log_r:
            state.m = float(prop)
            if stats is not None:
                stats["m"] = stats.get("m", 0) + 1

    prop = state.nu * np.exp(scales.nu * rng.standard_normal())
    u = rng.random()
    if NU_BOX[0] <= prop <= NU_BOX[1] and prop > p:
        log_r = (
            _dof_loglik_nu(state, prop)
            - _dof_loglik_nu(state, state.nu)
            + np.log(prop / state.nu)
        )
        if np.log(u) < log_r:
            state.nu = float(prop)
            if stats is not None:
                stats["nu"] = stats.get("nu", 0) + 1
    return state


def update_theta_dmh(
    state: ModelState,
    lattice: Lattice,
    rng,
    *,
    inner_sweeps: int = 5,
    scales: RwScales | None = None,
    stats: dict | None = None,
) -> ModelState:
    """One joint double-MH step for theta = (alpha, beta, xi).

    Auxiliary labels are produced by ``inner_sweeps`` prior Gibbs sweeps under
    the proposal, started from the current labels; the acceptance ratio uses
    only joint_log_energy differences, so the intractable normalizer cancels.
    """
    scales = scales or RwScales()
    theta = state.theta
    steps = rng.standard_normal(3)
    correction = 0.0

    if theta.alpha > 0 and scales.alpha > 0:
        alpha_prop = theta.alpha * np.exp(scales.alpha * steps[0])
        correction += np.log(alpha_prop / theta.alpha)
    else:
        alpha_prop = theta.alpha
    if theta.beta > 0 and scales.beta > 0:
        beta_prop = theta.beta * np.exp(scales.beta * steps[1])
        correction += np.log(beta_prop / theta.beta)
    else:
        beta_prop = theta.beta
    if 0.0 < theta.xi < 1.0 and scales.xi > 0:
        xi_prop = float(expit(logit(theta.xi) + scales.xi * steps[2]))
        xi_prop = min(max(xi_prop, 1e-12), 1.0 - 1e-12)
        correction += np.log(xi_prop * (1 - xi_prop)) - np.log(
            theta.xi * (1 - theta.xi)
        )
    else:
        xi_prop = theta.xi

    u = rng.random()
    if alpha_prop > ALPHA_MAX or beta_prop > BETA_MAX:
        return state  # outside the uniform prior box: reject
    proposal = PottsHyper(alpha_prop, beta_prop, xi_prop)

    aux = state.labels.copy()
    for _ in range(inner_sweeps):
        gibbs_sweep_prior(aux, lattice, proposal, rng)

    log_r = (
        joint_log_energy(aux, lattice, theta)
        + joint_log_energy(state.labels, lattice, proposal)
        - joint_log_energy(state.labels, lattice, theta)
        - joint_log_energy(aux, lattice, proposal)
        + correction
    )
    if np.log(u) < log_r:
        state.theta = proposal
        if stats is not None:
            stats["theta"] = stats.get("theta", 0) + 1
    return state


def initial_labels(data: FieldData, K: int) -> LabelField:
    """Quantile-bin voxels on log-det into K components; h = per-group mode."""
    logdet = data.logdet_tensors.ravel()
    order = np.argsort(logdet, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(order.size)
    g = (ranks * K // order.size + 1).astype(np.int32)
    g = g.reshape(data.n_subjects, data.n_sites)
    h = np.ones((2, data.n_sites), dtype=np.int32)
    for x in (0, 1):
        members = g[data.group_of == x]
        if members.shape[0] == 0:
            continue
        for v in range(data.n_sites):
            h[x, v] = np.bincount(members[:, v], minlength=K + 1)[1:].argmax() + 1
    return LabelField(K, g, h, data.group_of)


@dataclass
class TraceStore:
    """Post-burn-in samples plus derived summaries of one chain."""

    lattice: Lattice
    K: int
    p: int
    seed: int
    theta: np.ndarray  # (T, 3)
    m: np.ndarray
    nu: np.ndarray
    agree_bits: np.ndarray  # (T, ceil(n/8)) packed 1(h_0v == h_1v)
    agree_sum: np.ndarray  # (n,) running sum of the indicator
    n_retained: int
    acceptance: dict
    snapshot_iterations: np.ndarray
    snapshot_g: np.ndarray  # (S, N, n)
    snapshot_h: np.ndarray  # (S, 2, n)
    snapshot_atoms: np.ndarray  # (S, K, p, p)
    group_of: np.ndarray
    subject_ids: list
    config: dict
    sigma: np.ndarray
    interrupted: bool = False

    def prob_diff(self) -> np.ndarray:
        """Posterior probability that the two group labels differ, per voxel."""
        if self.n_retained == 0:
            raise EmptyTrace("no retained iterations")
        return 1.0 - self.agree_sum / self.n_retained

    def hyperparameter_chains(self) -> dict:
        return {
            "alpha": self.theta[:, 0],
            "beta": self.theta[:, 1],
            "xi": self.theta[:, 2],
            "m": self.m,
            "nu": self.nu,
        }


def run_chain(fields, config: FitConfig, *, progress=None) -> TraceStore:
    """Run the full posterior sampler over a collection of tensor fields.

    Adapts the random-walk scales toward a 20-50% acceptance rate during
    burn-in (frozen afterward) unless ``config.adapt`` is false.  A
    KeyboardInterrupt flushes the partial trace instead of losing it.
    """
    data = FieldData.from_fields(fields)
    rng = np.random.default_rng(config.seed)
    sigma = estimate_sigma(fields)
    K = config.K

    labels = initial_labels(data, K)
    state = ModelState(
        atoms=np.zeros((K, data.p, data.p)),
        labels=labels,
        m=10.0,
        nu=10.0,
        theta=PottsHyper(1.0, 1.0, 0.5),
        sigma=sigma,
    )
    update_atoms(state, data, rng, printed_dof=config.printed_atom_dof)
    state.validate()

    scales = replace(config.rw_scales)
    n = data.n_sites
    n_retained = config.iterations - config.burn_in
    theta_trace = np.zeros((n_retained, 3))
    m_trace = np.zeros(n_retained)
    nu_trace = np.zeros(n_retained)
    agree_bits = np.zeros((n_retained, (n + 7) // 8), dtype=np.uint8)
    agree_sum = np.zeros(n, dtype=np.int64)
    snap_iters, snap_g, snap_h, snap_atoms = [], [], [], []
    post_counts: dict = {}
    window_counts: dict = {}
    window = 50
    kept = 0
    interrupted = False

    def _rescale(factor):
        for coord in ("alpha", "beta", "xi"):
            setattr(
                scales,
                coord,
                float(np.clip(getattr(scales, coord) * factor, 1e-3, 10.0)),
            )

    try:
        for it in range(config.iterations):
            in_burn = it < config.burn_in
            stats = window_counts if in_burn else post_counts
            update_labels(state, data, rng)
            update_atoms(state, data, rng, printed_dof=config.printed_atom_dof)
            update_dof(state, data, rng, scales=scales, stats=stats)
            update_theta_dmh(
                state,
                data.lattice,
                rng,
                inner_sweeps=config.dmh_inner_sweeps,
                scales=scales,
                stats=stats,
            )
            if config.adapt and in_burn and (it + 1) % window == 0:
                for name in ("m", "nu", "theta"):
                    rate = window_counts.get(name, 0) / window
                    factor = 0.7 if rate < 0.20 else (1.4 if rate > 0.50 else 1.0)
                    if factor == 1.0:
                        continue
                    if name == "theta":
                        _rescale(factor)
                    else:
                        setattr(
                            scales,
                            name,
                            float(
                                np.clip(getattr(scales, name) * factor, 1e-3, 10.0)
                            ),
                        )
                window_counts = {}
            if not in_burn:
                t = it - config.burn_in
                theta_trace[t] = state.theta.as_array()
                m_trace[t] = state.m
                nu_trace[t] = state.nu
                agree = state.labels.h[0] == state.labels.h[1]
                agree_sum += agree
                agree_bits[t] = np.packbits(agree)
                kept += 1
                if t % config.thin == 0:
                    snap_iters.append(it)
                    snap_g.append(state.labels.g.copy())
                    snap_h.append(state.labels.h.copy())
                    snap_atoms.append(state.atoms.copy())
            if progress is not None:
                progress(it)
    except KeyboardInterrupt:
        interrupted = True

    denom = max(kept, 1)
    acceptance = {
        "m": post_counts.get("m", 0) / denom,
        "nu": post_counts.get("nu", 0) / denom,
        "theta": post_counts.get("theta", 0) / denom,
    }
    return TraceStore(
        lattice=data.lattice,
        K=K,
        p=data.p,
        seed=config.seed,
        theta=theta_trace[:kept],
        m=m_trace[:kept],
        nu=nu_trace[:kept],
        agree_bits=agree_bits[:kept],
        agree_sum=agree_sum,
        n_retained=kept,
        acceptance=acceptance,
        snapshot_iterations=np.array(snap_iters, dtype=np.int64),
        snapshot_g=np.array(snap_g, dtype=np.int32)
        if snap_g
        else np.zeros((0, data.n_subjects, n), dtype=np.int32),
        snapshot_h=np.array(snap_h, dtype=np.int32)
        if snap_h
        else np.zeros((0, 2, n), dtype=np.int32),
        snapshot_atoms=np.array(snap_atoms)
        if snap_atoms
        else np.zeros((0, K, data.p, data.p)),
        group_of=data.group_of.copy(),
        subject_ids=list(data.subject_ids),
        config=config.to_dict(),
        sigma=sigma,
        interrupted=interrupted,
    )
