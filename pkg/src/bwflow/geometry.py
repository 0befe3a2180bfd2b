"""Bures-Wasserstein geometry on the cone of PSD matrices.

The squared distance between PSD matrices ``F`` and ``G`` is::

    d2(F, G) = tr(F) + tr(G) - 2 tr((G^{1/2} F G^{1/2})^{1/2})

realised by the optimal (transport) map::

    T(F -> G) = F^{-1/2} (F^{1/2} G F^{1/2})^{1/2} F^{-1/2}

with pseudo-inverses when ``F`` is singular, in which case the map exists
only if ``ker(F)`` is contained in ``ker(G)``.  Tangent vectors at ``F``
are Hermitian matrices ``U`` with inner product ``Re tr(U F V)``; the
exponential is ``exp_F(U) = (U + I) F (U + I)`` and the logarithm is
``log_F(G) = T(F -> G) - I``.  ``embed(F, U) = U F^{1/2}`` maps tangent
vectors isometrically into matrices under the Frobenius inner product.

All operations accept stacked matrices ``(..., d, d)`` with broadcasting.
"""

import numpy as np

from . import linalg
from .exceptions import KernelNestingError, LambdaOutOfRangeError
from .linalg import PSD_TOL, RANK_TOL, ct


def _traces(a):
    return np.trace(a, axis1=-2, axis2=-1).real


def _order_keys(a):
    # per-element sort keys for the canonical argument order of the
    # distance cross term; any deterministic symmetric-in-(f, g) choice
    # works, ties fall back to the given order where the residual
    # asymmetry sits at the eigensolver noise floor
    d = a.shape[-1]
    return (
        _traces(a),
        np.linalg.norm(a, axis=(-2, -1)),
        np.einsum("...ii,i->...", a, np.arange(1.0, d + 1.0)).real,
    )


def _canonical_pair(f, g):
    # order (f, g) so bw_distance(f, g) == bw_distance(g, f) exactly
    f2, g2 = np.broadcast_arrays(f, g)
    kf, kg = _order_keys(f2), _order_keys(g2)
    swap = np.zeros(f2.shape[:-2], dtype=bool)
    tied = np.ones_like(swap)
    for a, b in zip(kf, kg):
        swap |= tied & (a < b)
        tied &= a == b
    if not np.any(swap):
        return f, g
    s = swap[..., None, None]
    return np.where(s, g2, f2), np.where(s, f2, g2)


def bw_distance(f, g, psd_tol=PSD_TOL, check=True, squared=False):
    """Bures-Wasserstein distance between PSD matrices.

    Parameters
    ----------
    f, g : ndarray, shape (..., d, d)
        PSD matrices; stacks broadcast against each other.
    psd_tol : float
        Relative tolerance for the PSD validation.
    check : bool
        Validate inputs (finite, Hermitian, PSD).
    squared : bool
        Return the squared distance instead.

    Returns
    -------
    float or ndarray
        Distance per broadcast element.  Negative round-off inside the
        square roots is clamped at zero.  The cross term is evaluated in
        a canonical argument order, so the result is exactly symmetric.
    """
    f = np.asarray(f)
    g = np.asarray(g)
    if check:
        linalg.validate_cov_matrix(f, psd_tol)
        linalg.validate_cov_matrix(g, psd_tol)
    if f.shape[-1] != g.shape[-1]:
        raise linalg.DimMismatchError(
            f"dimension mismatch: {f.shape[-1]} vs {g.shape[-1]}"
        )
    fc, gc = _canonical_pair(f, g)
    rg = linalg.sqrt_psd(gc, psd_tol, check=False)
    w = np.linalg.eigvalsh(rg @ fc @ rg)
    cross = np.sqrt(np.maximum(w, 0.0)).sum(axis=-1)
    d2 = np.maximum(_traces(f) + _traces(g) - 2.0 * cross, 0.0)
    out = d2 if squared else np.sqrt(d2)
    return float(out) if out.ndim == 0 else out


def transport_map(f, g, rank_tol=RANK_TOL, psd_tol=PSD_TOL, check=True):
    """Optimal map ``T`` with ``T f T = g`` (pseudo-inverse convention).

    ``f`` and ``g`` may be stacks and broadcast against each other.  When
    ``f`` is rank deficient the kernel-nesting condition is enforced by
    requiring ``||g (I - P)||_F <= rank_tol * ||g||_F`` for the range
    projector ``P`` of ``f``, and the returned map acts as zero on
    ``ker(f)``.
    """
    f = np.asarray(f)
    g = np.asarray(g)
    if check:
        linalg.validate_cov_matrix(f, psd_tol)
        linalg.validate_cov_matrix(g, psd_tol)
    if f.shape[-1] != g.shape[-1]:
        raise linalg.DimMismatchError(
            f"dimension mismatch: {f.shape[-1]} vs {g.shape[-1]}"
        )
    w, v = linalg.hermitian_eig(f, check=False)
    w = np.maximum(w, 0.0)
    lead = np.maximum(w[..., :1], 0.0)
    mask = w > rank_tol * lead
    if not mask.all():
        proj = linalg._assemble(mask.astype(w.dtype), v)
        eye = np.eye(f.shape[-1], dtype=proj.dtype)
        resid = np.linalg.norm(g @ (eye - proj), axis=(-2, -1))
        norms = np.linalg.norm(g, axis=(-2, -1))
        if np.any(resid > rank_tol * np.maximum(norms, 1e-300)):
            raise KernelNestingError(
                "transport source kernel is not contained in the target kernel"
            )
    rf = linalg._assemble(np.sqrt(w), v)
    rif = linalg._assemble(
        np.where(mask, 1.0 / np.sqrt(np.where(mask, w, 1.0)), 0.0), v
    )
    mid = linalg.sqrt_psd(rf @ g @ rf, psd_tol, check=False)
    t = rif @ mid @ rif
    return 0.5 * (t + ct(t))


def geodesic(f0, f1, lam, rank_tol=RANK_TOL, check=True):
    """Point(s) on the constant-speed geodesic from ``f0`` to ``f1``.

    ``lam`` may be a scalar in [0, 1] or an array of such; an array yields
    a stack of matrices along the leading axis.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise LambdaOutOfRangeError("geodesic parameter must lie in [0, 1]")
    t = transport_map(f0, f1, rank_tol=rank_tol, check=check)
    eye = np.eye(t.shape[-1], dtype=t.dtype)
    s = lam[..., None, None] * t + (1.0 - lam[..., None, None]) * eye
    out = s @ f0 @ s
    return 0.5 * (out + ct(out))


def log_map(f, g, rank_tol=RANK_TOL, check=True):
    """Riemannian logarithm ``T(f -> g) - I`` at base point ``f``."""
    t = transport_map(f, g, rank_tol=rank_tol, check=check)
    return t - np.eye(t.shape[-1], dtype=t.dtype)


def exp_map(f, gamma, check=True):
    """Riemannian exponential ``(gamma + I) f (gamma + I)``, PSD-projected."""
    gamma = np.asarray(gamma)
    f = np.asarray(f)
    if check:
        linalg.validate_cov_matrix(f)
        linalg.check_hermitian(gamma)
    s = gamma + np.eye(gamma.shape[-1], dtype=gamma.dtype)
    return linalg.project_psd(s @ f @ s, check=False)


def tangent_inner(f, u, v, check=True):
    """Tangent-space inner product ``Re tr(u f v)`` at base point ``f``."""
    if check:
        linalg.validate_cov_matrix(f)
        linalg.check_hermitian(u)
        linalg.check_hermitian(v)
    val = np.trace(np.asarray(u) @ np.asarray(f) @ np.asarray(v), axis1=-2, axis2=-1)
    out = np.real(val)
    return float(out) if out.ndim == 0 else out


def tangent_norm(f, u, check=True):
    """Norm induced by :func:`tangent_inner`."""
    val = tangent_inner(f, u, u, check=check)
    return np.sqrt(np.maximum(val, 0.0))


def embed(f, u, psd_tol=PSD_TOL, check=True):
    """Isometric embedding ``u @ f^{1/2}`` of a tangent vector at ``f``."""
    return np.asarray(u) @ linalg.sqrt_psd(f, psd_tol, check=check)


def unembed(f, x, rank_tol=RANK_TOL, check=True):
    """Left inverse of :func:`embed` on the range of ``f``: ``x @ f^{-1/2}``."""
    return np.asarray(x) @ linalg.pinv_sqrt_psd(f, rank_tol, check=check)


def hs_inner(x, y):
    """Frobenius inner product ``Re tr(x y*)`` of embedded tangents."""
    out = np.real(np.sum(np.asarray(x) * np.conjugate(np.asarray(y)), axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out
