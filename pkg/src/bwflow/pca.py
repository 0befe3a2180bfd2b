"""Principal component analysis of flows in the tangent space of their mean.

Each flow is lifted to the embedded log field

    chi_i(t) = M(t)^{-1/2} (M(t)^{1/2} F_i(t) M(t)^{1/2})^{1/2} - M(t)^{1/2}

around the mean flow ``M``.  Fields live in the matrix space with the
quadrature-weighted Frobenius inner product

    <x, y> = sum_t w_t Re tr(x(t) y(t)*)

and the eigenproblem of their empirical covariance is solved through the
n x n Gram matrix: nonzero covariance eigenvalues equal ``gamma_k / n``
for Gram eigenvalues ``gamma_k``, eigenfields are the corresponding
normalised sample combinations, and scores are ``sqrt(gamma_k) u_ik``.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import linalg
from .barycenter import GdConfig, frechet_mean_flow
from .exceptions import (
    DimMismatchError,
    GridMismatchError,
    KOutOfRangeError,
    KTooLargeError,
    LambdaTooLargeError,
    ValidationError,
)
from .flow import Flow, FlowSet, trapezoid_weights
from .geometry import exp_map
from .linalg import RANK_TOL, ct

MODE_EPS = 1e-6
DEGENERATE_REL = 1e-24


@dataclass(frozen=True)
class TangentField:
    """Embedded tangent field: one (generally non-Hermitian) matrix per time."""

    grid: np.ndarray
    mats: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        mats = np.asarray(self.mats)
        if mats.ndim != 3 or mats.shape[-1] != mats.shape[-2]:
            raise DimMismatchError(f"mats must have shape (m, d, d), got {mats.shape}")
        if mats.shape[0] != grid.size:
            raise DimMismatchError(f"{grid.size} grid points, {mats.shape[0]} matrices")
        linalg.check_finite(mats)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mats", mats)

    @property
    def dim(self):
        return self.mats.shape[-1]


def log_field_mats(flows, mean_flow, rank_tol=RANK_TOL):
    """Embedded log fields of every flow as one (n, m, d, d) array."""
    if not isinstance(flows, FlowSet):
        flows = FlowSet.from_flows(flows)
    if not np.array_equal(flows.grid, mean_flow.grid):
        raise GridMismatchError("flows and mean flow are on different grids")
    if flows.dim != mean_flow.dim:
        raise DimMismatchError(
            f"flows have dimension {flows.dim}, mean has {mean_flow.dim}"
        )
    n, m, d = flows.n_flows, flows.n_times, flows.dim
    dtype = np.promote_types(flows.mats.dtype, mean_flow.mats.dtype)
    out = np.empty((n, m, d, d), dtype=np.promote_types(dtype, float))
    for j in range(m):
        w, v = linalg.hermitian_eig(mean_flow.mats[j], check=False)
        w = np.maximum(w, 0.0)
        mask = w > rank_tol * max(w[0], 0.0)
        rm = linalg._assemble(np.sqrt(w), v)
        rim = linalg._assemble(
            np.where(mask, 1.0 / np.sqrt(np.where(mask, w, 1.0)), 0.0), v
        )
        iw, iv = np.linalg.eigh(rm @ flows.mats[:, j] @ rm)
        mid = (iv * np.sqrt(np.maximum(iw, 0.0))[..., None, :]) @ ct(iv)
        out[:, j] = rim @ mid - rm
    return out


def log_field(flows, mean_flow, rank_tol=RANK_TOL):
    """Embedded log fields as a list of :class:`TangentField`."""
    mats = log_field_mats(flows, mean_flow, rank_tol)
    grid = mean_flow.grid
    return [TangentField(grid, mats[i]) for i in range(mats.shape[0])]


@dataclass
class PcaModel:
    """Fitted tangent PCA.

    ``eigenvalues`` are covariance eigenvalues (descending),
    ``components`` are unit-norm embedded eigenfields, ``scores`` has
    shape (n, K) and ``total_variance`` is the trace of the empirical
    covariance, so eigenvalue fractions are comparable across fits.
    """

    mean_flow: Flow
    eigenvalues: np.ndarray
    components: list
    scores: np.ndarray
    total_variance: float
    rank_tol: float = RANK_TOL

    @property
    def n_components(self):
        return len(self.components)

    @property
    def variance_fractions(self):
        if self.total_variance <= 0.0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def save(self, prefix):
        from . import io as _io

        _io.save_pca_model(self, prefix)

    @classmethod
    def load(cls, prefix):
        from . import io as _io

        return _io.load_pca_model(prefix)


def _field_inner_matrix(mats, weights):
    """Gram matrix of fields under the quadrature-weighted Frobenius product."""
    n = mats.shape[0]
    x = (mats * np.sqrt(weights)[None, :, None, None]).reshape(n, -1)
    if np.iscomplexobj(x):
        return (x @ x.conj().T).real
    return x @ x.T


def fit_pca(fields, mean_flow, weights=None, n_components=None, rank_tol=RANK_TOL):
    """Tangent PCA from precomputed log fields.

    Parameters
    ----------
    fields : list of TangentField or ndarray (n, m, d, d)
        Embedded log fields on the mean flow's grid.
    mean_flow : Flow
    weights : ndarray, optional
        Quadrature weights; trapezoidal on the grid by default.
    n_components : int, optional
        Number of components to keep, at most ``n``; defaults to the
        numerical rank of the Gram matrix.

    Returns
    -------
    PcaModel
        A degenerate sample (all fields numerically zero) yields a model
        with no components and zero scores rather than an error.
    """
    if isinstance(fields, np.ndarray):
        mats = fields
    else:
        fields = list(fields)
        mats = np.stack([f.mats for f in fields])
    n, m = mats.shape[0], mats.shape[1]
    if m != mean_flow.n_times:
        raise GridMismatchError("fields and mean flow are on different grids")
    if n < 1:
        raise ValidationError("need at least one field")
    if n_components is not None and not 1 <= n_components <= n:
        raise KTooLargeError(f"n_components must be in [1, {n}], got {n_components}")
    if weights is None:
        weights = trapezoid_weights(mean_flow.grid)
    weights = np.asarray(weights, dtype=float)

    gram = _field_inner_matrix(mats, weights)
    gram = 0.5 * (gram + gram.T)
    total_variance = float(np.trace(gram)) / n
    gw, gv = np.linalg.eigh(gram)
    gw, gv = gw[::-1], gv[:, ::-1]

    mean_scale = float(
        np.sum(weights * np.abs(mean_flow.mats).max(axis=(-2, -1)) ** 2)
    )
    floor = max(DEGENERATE_REL * mean_scale, 0.0)
    rank = int(np.sum(gw > np.maximum(floor, 1e-12 * max(gw[0], 0.0))))
    keep = rank if n_components is None else min(n_components, rank)

    if keep == 0:
        return PcaModel(
            mean_flow,
            np.zeros(0),
            [],
            np.zeros((n, 0)),
            total_variance,
            rank_tol,
        )

    gamma = gw[:keep]
    u = gv[:, :keep]
    # deterministic orientation: largest-magnitude score entry is positive
    flip = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(keep)])
    flip[flip == 0.0] = 1.0
    u = u * flip
    scores = u * np.sqrt(gamma)
    comps = np.einsum("ik,imab->kmab", u / np.sqrt(gamma), mats)
    grid = mean_flow.grid
    components = [TangentField(grid, comps[k]) for k in range(keep)]
    return PcaModel(mean_flow, gamma / n, components, scores, total_variance, rank_tol)


def tangent_pca(flows, mean_flow=None, n_components=None, gd_config=None,
                warm_start=True, n_jobs=1, rank_tol=RANK_TOL):
    """Full pipeline: mean flow (unless given), log fields, then PCA."""
    if not isinstance(flows, FlowSet):
        flows = FlowSet.from_flows(flows)
    if mean_flow is None:
        mean_flow, _ = frechet_mean_flow(
            flows, gd_config=gd_config or GdConfig(rank_tol=rank_tol),
            warm_start=warm_start, n_jobs=n_jobs,
        )
    mats = log_field_mats(flows, mean_flow, rank_tol)
    return fit_pca(mats, mean_flow, n_components=n_components, rank_tol=rank_tol)


def unembedded_component(model, k):
    """Hermitian tangent direction of component ``k`` at the mean.

    Right-multiplies the embedded eigenfield by ``M(t)^{-1/2}`` and
    symmetrises the round-off.
    """
    if not 0 <= k < model.n_components:
        raise KOutOfRangeError(f"component {k} outside [0, {model.n_components})")
    mean = model.mean_flow
    comp = model.components[k].mats
    out = np.empty_like(comp)
    for j in range(mean.n_times):
        rim = linalg.pinv_sqrt_psd(mean.mats[j], model.rank_tol, check=False)
        psi = comp[j] @ rim
        out[j] = 0.5 * (psi + ct(psi))
    return out


def max_mode_amplitude(model, k):
    """Largest safe amplitude ``1 / (max_t ||Psi_k(t)||_inf + eps)``."""
    psi = unembedded_component(model, k)
    top = max(float(np.abs(np.linalg.eigvalsh(psi[j])).max()) for j in range(len(psi)))
    return 1.0 / (top + MODE_EPS)


def mode_of_variation(model, k, lam):
    """Flow ``t -> exp_{M(t)}(lam * Psi_k(t))`` along component ``k``.

    ``|lam|`` must not exceed :func:`max_mode_amplitude`, which keeps
    ``lam * Psi_k + I`` positive and the mode inside the PSD cone.
    """
    lam = float(lam)
    bound = max_mode_amplitude(model, k)
    if abs(lam) > bound:
        raise LambdaTooLargeError(
            f"|lam| = {abs(lam):.3e} exceeds the positivity bound {bound:.3e}"
        )
    psi = unembedded_component(model, k)
    mean = model.mean_flow
    mats = np.stack(
        [exp_map(mean.mats[j], lam * psi[j], check=False) for j in range(mean.n_times)]
    )
    return Flow(mean.grid, mats)


def project_scores(flow, model, rank_tol=None):
    """Score vector of a flow against a fitted model.

    The flow must live on the model grid (resample with ``mccann_eval``
    first otherwise); a training flow reproduces its stored score row.
    """
    rank_tol = model.rank_tol if rank_tol is None else rank_tol
    if not np.array_equal(flow.grid, model.mean_flow.grid):
        raise GridMismatchError(
            "flow grid differs from the model grid; resample it first"
        )
    chi = log_field_mats(FlowSet(flow.grid, flow.mats[None]), model.mean_flow, rank_tol)[0]
    weights = trapezoid_weights(model.mean_flow.grid)
    out = np.empty(model.n_components)
    for k, comp in enumerate(model.components):
        out[k] = float(
            np.sum(weights * np.sum(chi * np.conjugate(comp.mats), axis=(-2, -1)).real)
        )
    return out


class TangentPCA(BaseEstimator, TransformerMixin):
    """Estimator wrapper: tangent PCA of a FlowSet.

    Parameters
    ----------
    n_components : int or None
        Components to keep (None keeps the Gram rank).
    mean : Flow or None
        Precomputed mean flow; fitted by gradient descent when None.
    max_iter, tol, warm_start, n_jobs, rank_tol
        Mean-solver settings, as in :class:`~bwflow.barycenter.FrechetMeanFlow`.
    """

    def __init__(self, n_components=None, mean=None, max_iter=200, tol=1e-8,
                 warm_start=True, n_jobs=1, rank_tol=RANK_TOL):
        self.n_components = n_components
        self.mean = mean
        self.max_iter = max_iter
        self.tol = tol
        self.warm_start = warm_start
        self.n_jobs = n_jobs
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        cfg = GdConfig(max_iter=self.max_iter, tol=self.tol, rank_tol=self.rank_tol)
        self.model_ = tangent_pca(
            X, mean_flow=self.mean, n_components=self.n_components,
            gd_config=cfg, warm_start=self.warm_start, n_jobs=self.n_jobs,
            rank_tol=self.rank_tol,
        )
        self.mean_flow_ = self.model_.mean_flow
        self.eigenvalues_ = self.model_.eigenvalues
        self.components_ = self.model_.components
        self.scores_ = self.model_.scores
        self.total_variance_ = self.model_.total_variance
        self.explained_variance_ratio_ = self.model_.variance_fractions
        return self

    def transform(self, X):
        if isinstance(X, Flow):
            return project_scores(X, self.model_)[None]
        if not isinstance(X, FlowSet):
            X = FlowSet.from_flows(X)
        return np.stack([project_scores(fl, self.model_) for fl in X])
