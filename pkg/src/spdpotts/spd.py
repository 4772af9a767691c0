"""SPD matrix primitives and mean-parameterized Wishart / inverse-Wishart laws.

Both distributions are parameterized by their mean matrix: ``W_p(V, n)`` has
mean ``V`` (classical scale ``V / n``, dof ``n > p``) and ``IW_p(Psi, nu)``
has mean ``Psi`` (classical scale ``(nu - p - 1) * Psi``, dof ``nu > p + 1``).
Densities include the multivariate gamma normalizer.  Samplers use a Bartlett
factorization with chi-square marginals, so real (non-integer) degrees of
freedom are supported; no rejection steps anywhere.

The matrix dimension ``p`` is a runtime quantity.  Functions accept either a
plain ``(p, p)`` ndarray or an :class:`SpdMatrix`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import multigammaln

from .errors import DimensionMismatch, InvalidDof, NotPositiveDefinite

_LOG2 = float(np.log(2.0))

# Relative pivot threshold: pivot_j = L[j, j]^2 must exceed
# SPD_TOL * max(diag(A)) or the matrix is rejected as not positive definite.
SPD_TOL = 1e-12


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, SpdMatrix):
        return x.matrix
    return np.asarray(x, dtype=float)


def upper_indices(p: int):
    """Row-major indices of the upper triangle (diagonal included)."""
    return np.triu_indices(p)


def pack_upper(mat: np.ndarray) -> np.ndarray:
    """Pack a symmetric matrix into its upper triangle, row-major."""
    mat = np.asarray(mat, dtype=float)
    return mat[upper_indices(mat.shape[-1])].copy()


def unpack_upper(packed: np.ndarray, p: int) -> np.ndarray:
    """Rebuild the full symmetric matrix from packed upper-triangle values."""
    packed = np.asarray(packed, dtype=float)
    if packed.shape[-1] != p * (p + 1) // 2:
        raise DimensionMismatch(
            f"expected {p * (p + 1) // 2} packed values for p={p}, "
            f"got {packed.shape[-1]}"
        )
    out = np.zeros(packed.shape[:-1] + (p, p))
    iu = upper_indices(p)
    out[..., iu[0], iu[1]] = packed
    lower = np.swapaxes(out, -1, -2).copy()
    diag = out[..., np.arange(p), np.arange(p)].copy()
    out += lower
    out[..., np.arange(p), np.arange(p)] = diag
    return out


def spd_cholesky(a, *, tol: float = SPD_TOL) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    Raises :class:`NotPositiveDefinite` if the factorization breaks down or
    any pivot (squared diagonal of L) is at or below ``tol * max(diag(a))``.
    """
    a = _as_matrix(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if not np.allclose(a, a.T, rtol=1e-9, atol=0.0):
        raise ValueError("matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky failed: {exc}") from exc
    pivots = np.diag(lower) ** 2
    if np.any(pivots <= tol * np.max(np.diag(a))):
        raise NotPositiveDefinite("Cholesky pivot at or below tolerance")
    return lower


def is_spd(a, *, tol: float = SPD_TOL) -> bool:
    try:
        spd_cholesky(a, tol=tol)
    except (NotPositiveDefinite, ValueError, DimensionMismatch):
        return False
    return True


def validate_spd_batch(stack: np.ndarray, *, tol: float = SPD_TOL) -> None:
    """SPD-check a ``(..., p, p)`` stack; raises with the first bad index."""
    stack = np.asarray(stack, dtype=float)
    flat = stack.reshape(-1, stack.shape[-2], stack.shape[-1])
    if not np.all(np.isfinite(flat)):
        bad = int(np.nonzero(~np.isfinite(flat).all(axis=(1, 2)))[0][0])
        raise NotPositiveDefinite(f"matrix {bad} has non-finite entries")
    try:
        lower = np.linalg.cholesky(flat)
    except np.linalg.LinAlgError:
        for i, m in enumerate(flat):
            if not is_spd(m, tol=tol):
                raise NotPositiveDefinite(f"matrix {i} is not positive definite")
        raise
    p = flat.shape[-1]
    pivots = lower[:, np.arange(p), np.arange(p)] ** 2
    limit = tol * flat[:, np.arange(p), np.arange(p)].max(axis=1)
    bad = np.nonzero((pivots <= limit[:, None]).any(axis=1))[0]
    if bad.size:
        raise NotPositiveDefinite(f"matrix {int(bad[0])} has a pivot below tolerance")


@dataclass(frozen=True)
class SpdMatrix:
    """A p x p symmetric positive-definite matrix.

    Stores the upper triangle row-major; symmetry holds by construction and
    positive definiteness is verified with a tolerance-checked Cholesky at
    creation time.
    """

    dim: int
    elements: np.ndarray

    @classmethod
    def from_matrix(cls, mat, *, tol: float = SPD_TOL) -> "SpdMatrix":
        mat = _as_matrix(mat)
        spd_cholesky(mat, tol=tol)
        return cls(dim=mat.shape[0], elements=pack_upper(mat))

    @classmethod
    def from_packed(cls, packed, dim: int, *, tol: float = SPD_TOL) -> "SpdMatrix":
        return cls.from_matrix(unpack_upper(np.asarray(packed, float), dim), tol=tol)

    @property
    def matrix(self) -> np.ndarray:
        return unpack_upper(self.elements, self.dim)

    def packed(self) -> np.ndarray:
        return self.elements.copy()


def frobenius_sq_diff(a, b) -> float:
    """Squared Frobenius norm of the difference, ``Tr[(A-B)^T (A-B)]``."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum())


@dataclass(frozen=True)
class WishartParams:
    """Mean matrix ``V`` and degrees of freedom ``n > p`` of ``W_p(V, n)``."""

    mean: np.ndarray
    dof: float

    def __post_init__(self):
        mean = _as_matrix(self.mean)
        spd_cholesky(mean)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "dof", float(self.dof))
        if not self.dof > mean.shape[0]:
            raise InvalidDof(
                f"Wishart dof must exceed p={mean.shape[0]}, got {self.dof}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class InvWishartParams:
    """Mean matrix ``Psi`` and dof ``nu > p + 1`` of ``IW_p(Psi, nu)``."""

    mean: np.ndarray
    dof: float

    def __post_init__(self):
        mean = _as_matrix(self.mean)
        spd_cholesky(mean)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "dof", float(self.dof))
        if not self.dof > mean.shape[0] + 1:
            raise InvalidDof(
                f"inverse-Wishart dof must exceed p+1={mean.shape[0] + 1}, "
                f"got {self.dof}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _logdet_from_chol(lower: np.ndarray) -> float:
    return float(2.0 * np.log(np.diag(lower)).sum())


def wishart_logpdf(x, params: WishartParams) -> float:
    """Log density of the mean-parameterized Wishart at SPD matrix ``x``."""
    xm = _as_matrix(x)
    p = params.dim
    if xm.shape != (p, p):
        raise DimensionMismatch(f"x has shape {xm.shape}, expected {(p, p)}")
    n = params.dof
    lx = spd_cholesky(xm)
    lv = spd_cholesky(params.mean)
    # tr(V^{-1} X) = || Lv^{-1} Lx ||_F^2
    tr = float((solve_triangular(lv, lx, lower=True) ** 2).sum())
    return (
        0.5 * (n - p - 1) * _logdet_from_chol(lx)
        - 0.5 * n * tr
        - 0.5 * n * p * _LOG2
        - 0.5 * n * (_logdet_from_chol(lv) - p * np.log(n))
        - multigammaln(0.5 * n, p)
    )


def invwishart_logpdf(x, params: InvWishartParams) -> float:
    """Log density of the mean-parameterized inverse Wishart at ``x``."""
    xm = _as_matrix(x)
    p = params.dim
    if xm.shape != (p, p):
        raise DimensionMismatch(f"x has shape {xm.shape}, expected {(p, p)}")
    nu = params.dof
    scale = nu - p - 1.0
    lx = spd_cholesky(xm)
    lpsi = spd_cholesky(params.mean)
    # tr(Psi X^{-1}) = || Lx^{-1} Lpsi ||_F^2
    tr = float((solve_triangular(lx, lpsi, lower=True) ** 2).sum())
    return (
        0.5 * nu * (p * np.log(scale) + _logdet_from_chol(lpsi))
        - 0.5 * nu * p * _LOG2
        - multigammaln(0.5 * nu, p)
        - 0.5 * (nu + p + 1) * _logdet_from_chol(lx)
        - 0.5 * scale * tr
    )


def _bartlett(p: int, dof: float, rng: np.random.Generator, nsamp: int) -> np.ndarray:
    """Lower-triangular Bartlett factors T with T T' ~ W_p(identity scale, dof)."""
    t = np.zeros((nsamp, p, p))
    for j in range(p):
        t[:, j, j] = np.sqrt(rng.chisquare(dof - j, size=nsamp))
    if p > 1:
        rows, cols = np.tril_indices(p, -1)
        t[:, rows, cols] = rng.standard_normal((nsamp, rows.size))
    return t


def wishart_sample(params: WishartParams, rng: np.random.Generator, size=None):
    """Draw from ``W_p(V, n)`` via Bartlett factorization.

    Returns a single ``(p, p)`` matrix, or ``(size, p, p)`` when ``size``
    is given.
    """
    nsamp = 1 if size is None else int(size)
    p = params.dim
    root = spd_cholesky(params.mean) / np.sqrt(params.dof)
    t = _bartlett(p, params.dof, rng, nsamp)
    m = root @ t
    x = m @ m.transpose(0, 2, 1)
    x = 0.5 * (x + x.transpose(0, 2, 1))
    return x[0] if size is None else x


def invwishart_sample(params: InvWishartParams, rng: np.random.Generator, size=None):
    """Draw from ``IW_p(Psi, nu)`` as the inverse of a Wishart draw."""
    nsamp = 1 if size is None else int(size)
    p = params.dim
    nu = params.dof
    r = spd_cholesky((nu - p - 1.0) * params.mean)
    t = _bartlett(p, nu, rng, nsamp)
    # X = (T^{-1} R')' (T^{-1} R') inverts W = R^{-T} T T' R^{-1} in place.
    g = np.linalg.solve(t, np.broadcast_to(r.T, (nsamp, p, p)))
    x = g.transpose(0, 2, 1) @ g
    x = 0.5 * (x + x.transpose(0, 2, 1))
    return x[0] if size is None else x
