"""Hermitian/PSD matrix primitives shared by every other module.

All functions accept stacked operands of shape ``(..., d, d)`` and act on
the trailing two axes.  Real symmetric and complex Hermitian input follow
the same code paths; the scalar field is inferred from the dtype.

Tolerances
----------
``HERM_TOL``
    Relative tolerance for the Hermitian check (max-entry norm).
``PSD_TOL``
    Eigenvalues above ``-PSD_TOL * spectral_radius`` count as zero;
    anything below raises :class:`~bwflow.exceptions.NotPsdError`.
``RANK_TOL``
    Eigenvalues below ``RANK_TOL * lambda_max`` are treated as null
    directions by pseudo-inverses and range projectors.
"""

from typing import NamedTuple

import numpy as np

from .exceptions import DimMismatchError, NonFiniteError, NonHermitianError, NotPsdError

HERM_TOL = 1e-12
PSD_TOL = 1e-10
RANK_TOL = 1e-10


class EigenPair(NamedTuple):
    """Eigendecomposition of a Hermitian matrix.

    ``values`` are sorted in descending order; ``vectors[..., :, k]`` is the
    unit eigenvector paired with ``values[..., k]``.
    """

    values: np.ndarray
    vectors: np.ndarray


def ct(a):
    """Conjugate transpose of the trailing two axes."""
    return np.conjugate(np.swapaxes(a, -2, -1))


def check_square(a):
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimMismatchError(f"expected square matrices, got shape {a.shape}")
    return a


def check_finite(a):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("array contains NaN or infinite entries")
    return a


def check_hermitian(a, tol=HERM_TOL):
    """Raise unless ``a == a*`` entrywise within ``tol`` relative to max |entry|."""
    a = check_square(a)
    if a.size == 0:
        return a
    scale = np.abs(a).max(axis=(-2, -1))
    resid = np.abs(a - ct(a)).max(axis=(-2, -1))
    if np.any(resid > tol * np.maximum(scale, 1e-300)):
        worst = (resid / np.maximum(scale, 1e-300)).max()
        raise NonHermitianError(f"matrix deviates from Hermitian by relative {worst:.3e}")
    return a


def validate_cov_matrix(a, psd_tol=PSD_TOL, herm_tol=HERM_TOL):
    """Check that ``a`` is finite, Hermitian and PSD; return eigenvalues.

    Works on stacks; eigenvalues come back in descending order.
    """
    a = check_finite(a)
    check_hermitian(a, herm_tol)
    w = np.linalg.eigvalsh(a)
    scale = np.maximum(np.abs(w).max(axis=-1), 1e-300)
    if np.any(w[..., 0] < -psd_tol * scale):
        worst = (w[..., 0] / scale).min()
        raise NotPsdError(f"minimum relative eigenvalue {worst:.3e} below -{psd_tol:.0e}")
    return w[..., ::-1]


def hermitian_eig(a, check=True):
    """Eigendecomposition of Hermitian ``a`` with descending eigenvalues.

    Parameters
    ----------
    a : ndarray, shape (..., d, d)
        Hermitian matrices.
    check : bool
        Validate finiteness and Hermitian symmetry before decomposing.

    Returns
    -------
    EigenPair
        ``values`` of shape ``(..., d)`` descending, ``vectors`` unitary with
        eigenvectors in columns, satisfying ``V diag(w) V* = a`` to round-off.
    """
    a = np.asarray(a)
    if check:
        check_finite(a)
        check_hermitian(a)
    w, v = np.linalg.eigh(a)
    return EigenPair(w[..., ::-1], v[..., :, ::-1])


def _clamped_eig(a, psd_tol, check):
    """Eigendecomposition with negatives clamped at zero; raises beyond psd_tol."""
    w, v = hermitian_eig(a, check=check)
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1e-300)
    if np.any(w < -psd_tol * scale):
        worst = (w / scale).min()
        raise NotPsdError(f"minimum relative eigenvalue {worst:.3e} below -{psd_tol:.0e}")
    return np.maximum(w, 0.0), v


def _assemble(w, v):
    """Return ``V diag(w) V*`` symmetrized against round-off."""
    b = (v * w[..., None, :]) @ ct(v)
    return 0.5 * (b + ct(b))


def sqrt_psd(a, psd_tol=PSD_TOL, check=True):
    """Unique PSD square root of a PSD matrix (negatives within tol clamped)."""
    w, v = _clamped_eig(a, psd_tol, check)
    return _assemble(np.sqrt(w), v)


def pinv_sqrt_psd(a, rank_tol=RANK_TOL, psd_tol=PSD_TOL, check=True):
    """Moore-Penrose pseudo-inverse of the PSD square root.

    Eigenvalues below ``rank_tol * lambda_max`` are treated as exact zeros,
    so the result acts as ``a^{-1/2}`` on the range of ``a`` and as zero on
    its kernel.  The zero matrix maps to the zero matrix.
    """
    w, v = _clamped_eig(a, psd_tol, check)
    mask = w > rank_tol * w[..., :1]
    inv = np.where(mask, 1.0 / np.sqrt(np.where(mask, w, 1.0)), 0.0)
    return _assemble(inv, v)


def project_psd(a, check=True):
    """Nearest PSD matrix in Frobenius norm (eigenvalues clamped at zero)."""
    w, v = hermitian_eig(a, check=check)
    return _assemble(np.maximum(w, 0.0), v)


def range_projector(a, rank_tol=RANK_TOL, check=True):
    """Orthogonal projector onto the range of a PSD matrix."""
    w, v = hermitian_eig(a, check=check)
    lead = np.maximum(w[..., :1], 0.0)
    mask = (w > rank_tol * lead) & (w > 0.0)
    return _assemble(mask.astype(w.dtype), v)


def matrix_rank_psd(a, rank_tol=RANK_TOL):
    """Number of eigenvalues above ``rank_tol * lambda_max``."""
    w = np.linalg.eigvalsh(a)
    lead = np.maximum(w[..., -1:], 0.0)
    return int(np.count_nonzero((w > rank_tol * lead) & (w > 0.0), axis=-1))


def trace_norm(a):
    """Schatten-1 norm (sum of singular values)."""
    return float(np.linalg.svd(np.asarray(a), compute_uv=False).sum(axis=-1))


def hs_norm(a):
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(np.asarray(a)))


def operator_norm(a):
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(np.asarray(a), ord=2))
