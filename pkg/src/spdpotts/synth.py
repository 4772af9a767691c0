"""Synthetic data generators and detection scoring.

Three scenarios: prior-field realizations of the full generative model, the
banded mixture scenario with a rectangular region of group difference, and a
spatial log-Cholesky Gaussian-process construction that lies outside the
model family (misspecification stress test).  All generators are pure
functions of their seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import InvalidDof, LatticeMismatch
from .field import TensorField
from .lattice import Lattice
from .potts import LabelField, PottsHyper, gibbs_sweep_prior
from .spd import InvWishartParams, WishartParams, invwishart_sample, wishart_sample

SCENARIO_KINDS = ("prior-field", "mixture", "cholesky")


@dataclass
class GroundTruth:
    """Voxels where the two groups' label processes differ."""

    lattice: Lattice
    difference_mask: np.ndarray

    def __post_init__(self):
        self.difference_mask = np.asarray(self.difference_mask, dtype=bool)
        if self.difference_mask.shape != (self.lattice.n_sites,):
            raise LatticeMismatch("difference mask does not fit the lattice")


@dataclass
class DetectionMetrics:
    tpr: float
    fpr: float
    fdr: float


@dataclass
class ScenarioSpec:
    """Declarative description of a synthetic dataset."""

    kind: str
    dims: tuple = (40, 40)
    subjects_per_group: int = 5
    seed: int = 0
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        self.dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("dims must be positive")
        if self.subjects_per_group < 1:
            raise ValueError("subjects_per_group must be >= 1")

    def generate(self):
        if self.kind == "mixture":
            return generate_mixture_scenario(
                self.seed,
                dims=self.dims,
                subjects_per_group=self.subjects_per_group,
                **self.params,
            )
        if self.kind == "cholesky":
            return generate_cholesky_scenario(
                self.seed,
                dims=self.dims,
                subjects_per_group=self.subjects_per_group,
                **self.params,
            )
        fields, labels = generate_prior_group_fields(
            dims=self.dims,
            subjects_per_group=self.subjects_per_group,
            rng=np.random.default_rng(self.seed),
            **self.params,
        )
        return fields, None


def _tensors_from_labels(labels_row, atoms, m, rng):
    """Draw A_v ~ IW(atom_of_label, m), batched per label value."""
    n = labels_row.shape[0]
    p = atoms.shape[-1]
    out = np.empty((n, p, p))
    for k in np.unique(labels_row):
        idx = np.nonzero(labels_row == k)[0]
        params = InvWishartParams(atoms[k - 1], m)
        out[idx] = invwishart_sample(params, rng, size=idx.size)
    return out


def generate_prior_field(dims, K, theta, m, nu, sigma, sweeps, rng):
    """One single-subject realization of the generative model.

    Labels come from ``sweeps`` prior Gibbs sweeps (pass ``theta`` with
    alpha = 0 for the plain single-subject label model), atoms from the
    Wishart layer, tensors from the inverse-Wishart layer.  Requires
    ``m > p + 1`` even though reported prior-field illustrations use smaller
    values; the mean of the tensor layer must exist.
    """
    sigma = np.asarray(getattr(sigma, "matrix", sigma), dtype=float)
    p = sigma.shape[0]
    if not m > p + 1:
        raise InvalidDof(f"m must exceed p+1={p + 1}")
    lattice = Lattice.grid(dims)
    labels = LabelField.uniform_random(lattice, K, [0], rng)
    for _ in range(sweeps):
        gibbs_sweep_prior(labels, lattice, theta, rng)
    atoms = wishart_sample(WishartParams(sigma, nu), rng, size=K)
    tensors = _tensors_from_labels(labels.g[0], atoms, m, rng)
    return TensorField(lattice, tensors, subject_id="prior-0", group=0), labels


def generate_prior_group_fields(
    dims, K, theta, m, nu, sigma, sweeps, subjects_per_group, rng
):
    """Multi-subject realization of the hierarchical generative model."""
    sigma = np.asarray(getattr(sigma, "matrix", sigma), dtype=float)
    p = sigma.shape[0]
    if not m > p + 1:
        raise InvalidDof(f"m must exceed p+1={p + 1}")
    lattice = Lattice.grid(dims)
    n_sub = 2 * subjects_per_group
    group_of = np.zeros(n_sub, dtype=np.int8)
    group_of[subjects_per_group:] = 1
    labels = LabelField.uniform_random(lattice, K, group_of, rng)
    for _ in range(sweeps):
        gibbs_sweep_prior(labels, lattice, theta, rng)
    atoms = wishart_sample(WishartParams(sigma, nu), rng, size=K)
    fields = []
    for i in range(n_sub):
        tensors = _tensors_from_labels(labels.g[i], atoms, m, rng)
        fields.append(
            TensorField(
                lattice,
                tensors,
                subject_id=f"prior-{i}",
                group=int(group_of[i]),
            )
        )
    return fields, labels


def mixture_partition(dims):
    """Band/block label layouts of the mixture scenario.

    Returns (control_labels, treatment_labels) over the full grid.  Four
    column bands carry labels 1..4 ordered right-to-left; the treatment grid
    replaces a centered square block of band 2 (side = band width) with
    label 5.
    """
    rows, cols = dims
    if cols % 4:
        raise ValueError("mixture scenario needs a column count divisible by 4")
    band_w = cols // 4
    col_idx = np.arange(cols)
    control_row = 4 - col_idx // band_w
    control = np.tile(control_row, (rows, 1)).astype(np.int32)
    treatment = control.copy()
    r0 = (rows - band_w) // 2
    band2_cols = slice(2 * band_w, 3 * band_w)
    treatment[r0 : r0 + band_w, band2_cols] = 5
    return control, treatment


def generate_mixture_scenario(seed, dims=(40, 40), subjects_per_group=5):
    """Banded mixture datasets: fields for both groups plus the truth mask.

    Control subjects share the four-band partition; treatment subjects share
    the same partition with a centered block of band 2 relabeled.  The five
    scenario atoms are drawn once per dataset (W_3((k+1) I, 30) for the
    bands, W_3(1.5 I, 30) for the block) and tensors follow IW_3(atom, 5).
    """
    lattice = Lattice.grid(dims)
    control, treatment = mixture_partition(dims)
    control_labels = lattice.from_grid(control)
    treatment_labels = lattice.from_grid(treatment)
    truth = GroundTruth(lattice, control_labels != treatment_labels)

    root = np.random.SeedSequence(seed)
    atom_rng = np.random.default_rng(root.spawn(1)[0])
    atoms = np.empty((5, 3, 3))
    for k in range(1, 5):
        atoms[k - 1] = wishart_sample(
            WishartParams((k + 1.0) * np.eye(3), 30.0), atom_rng
        )
    atoms[4] = wishart_sample(WishartParams(1.5 * np.eye(3), 30.0), atom_rng)

    n_sub = 2 * subjects_per_group
    streams = root.spawn(1 + n_sub)[1:]
    fields = []
    for i in range(n_sub):
        group = 0 if i < subjects_per_group else 1
        labels_row = control_labels if group == 0 else treatment_labels
        rng_i = np.random.default_rng(streams[i])
        tensors = _tensors_from_labels(labels_row, atoms, 5.0, rng_i)
        name = f"{'control' if group == 0 else 'treated'}-{i % subjects_per_group}"
        fields.append(TensorField(lattice, tensors, subject_id=name, group=group))
    return fields, truth


def _center_block_mask(dims, side):
    rows, cols = dims
    mask = np.zeros(dims, dtype=bool)
    r0 = (rows - side) // 2
    c0 = (cols - side) // 2
    mask[r0 : r0 + side, c0 : c0 + side] = True
    return mask


def generate_cholesky_scenario(
    seed,
    dims=(40, 40),
    subjects_per_group=10,
    tau2=0.1,
    rho=2.0,
    diag_shift=0.5,
    offdiag_shift=0.25,
):
    """Spatial log-Cholesky process datasets (model misspecification).

    Six Gaussian processes per subject (variance tau2, exponential
    correlation exp(-d / rho)) fill a lower-triangular matrix whose diagonal
    is exponentiated; A = L L'.  Treatment subjects get a mean shift inside
    the centered block: ``diag_shift`` on the three log-diagonal components,
    ``offdiag_shift`` on the three off-diagonal ones.
    """
    lattice = Lattice.grid(dims)
    n = lattice.n_sites
    block = _center_block_mask(dims, dims[1] // 4)
    truth = GroundTruth(lattice, lattice.from_grid(block))

    if tau2 > 0:
        d = np.sqrt(lattice.pairwise_sq_distances().astype(float))
        cov = tau2 * np.exp(-d / rho)
        cov[np.diag_indices(n)] += 1e-10 * tau2
        chol = np.linalg.cholesky(cov)
    else:
        chol = np.zeros((n, n))

    in_block = truth.difference_mask
    shifts = np.zeros((6, n))
    for k in range(6):
        shifts[k, in_block] = diag_shift if k < 3 else offdiag_shift

    root = np.random.SeedSequence(seed)
    n_sub = 2 * subjects_per_group
    streams = root.spawn(n_sub)
    fields = []
    tri = [(1, 0), (2, 0), (2, 1)]
    for i in range(n_sub):
        group = 0 if i < subjects_per_group else 1
        rng_i = np.random.default_rng(streams[i])
        z = rng_i.standard_normal((6, n))
        u = z @ chol.T
        if group == 1:
            u += shifts
        lower = np.zeros((n, 3, 3))
        for k in range(3):
            lower[:, k, k] = np.exp(u[k])
        for k, (r, c) in enumerate(tri):
            lower[:, r, c] = u[3 + k]
        tensors = lower @ lower.transpose(0, 2, 1)
        tensors = 0.5 * (tensors + tensors.transpose(0, 2, 1))
        name = f"{'control' if group == 0 else 'treated'}-{i % subjects_per_group}"
        fields.append(TensorField(lattice, tensors, subject_id=name, group=group))
    return fields, truth


def eval_detection(predicted, truth: GroundTruth) -> DetectionMetrics:
    """TPR/FPR/FDR of a voxel-wise decision mask against the truth.

    FDR is defined as 0 when there are no discoveries.
    """
    predicted = np.asarray(predicted, dtype=bool)
    if predicted.shape != truth.difference_mask.shape:
        raise LatticeMismatch("prediction does not fit the truth lattice")
    actual = truth.difference_mask
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int((~predicted & ~actual).sum())
    tpr = tp / (tp + fn) if (tp + fn) else 0.0
    fpr = fp / (fp + tn) if (fp + tn) else 0.0
    fdr = fp / max(tp + fp, 1)
    return DetectionMetrics(tpr=tpr, fpr=fpr, fdr=fdr)
