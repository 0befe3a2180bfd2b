"""Kernel smoothers for sparsely observed flows.

Three estimators act on scattered observations ``(T_j, F_j)`` tagged by
the flow they come from:

* :func:`nw_smooth` -- Euclidean kernel average, PSD-projected.
* :func:`lfr_estimate` -- local Frechet regression: a weighted barycenter
  with signed local-linear weights

      s(T, t, h) = K_h(T - t) (mu2 - mu1 (T - t)) / (mu0 mu2 - mu1^2),
      mu_a = (1/r) sum_j K_h(T_j - t) (T_j - t)^a

  which satisfy ``(1/r) sum_j s_j = 1`` and ``(1/r) sum_j s_j (T_j-t) = 0``.
* :func:`cov_surface_smooth` -- local-linear estimate of the covariance
  surface ``Gamma(s, t)`` from cross pairs (j != l) of embedded tangents,
  assembled from the moment statistics ``S_ab`` and ``R_ab`` by Cramer's
  rule, which reproduces surfaces affine in (s, t) exactly.

Negative local-linear weights are kept; the barycenter falls back to
clipped weights (flagged) only when the signed iteration leaves the PSD
cone or diverges.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import linalg
from .barycenter import GdConfig, euclidean_mean, frechet_mean_gd
from .exceptions import (
    DimMismatchError,
    EmptyWindowError,
    KernelNestingError,
    NegativeWeightWarning,
    NonConvergenceError,
    SingularDesignError,
    SingularMomentsWarning,
    ValidationError,
)
from .flow import Flow, FlowSet, trapezoid_weights
from .geometry import bw_distance
from .linalg import ct

_KERNEL_SUPPORT = {"uniform": 1.0, "epanechnikov": 1.0, "gaussian_truncated": 4.0}


def _kernel_base(kind, u):
    if kind == "uniform":
        return np.where(np.abs(u) <= 1.0, 0.5, 0.0)
    if kind == "epanechnikov":
        return np.where(np.abs(u) <= 1.0, 0.75 * np.maximum(1.0 - u * u, 0.0), 0.0)
    if kind == "gaussian_truncated":
        out = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
        return np.where(np.abs(u) <= 4.0, out, 0.0)
    raise ValidationError(f"unknown kernel kind {kind!r}")


@dataclass(frozen=True)
class Kernel:
    """Compactly supported smoothing kernel with bandwidth ``h``."""

    kind: str = "epanechnikov"
    bandwidth: float = 0.1

    def __post_init__(self):
        if self.kind not in _KERNEL_SUPPORT:
            raise ValidationError(
                f"kernel kind must be one of {sorted(_KERNEL_SUPPORT)}, got {self.kind!r}"
            )
        if not self.bandwidth > 0.0:
            raise ValidationError("bandwidth must be positive")

    def weight(self, x):
        """Scaled weight ``K(x / h) / h``."""
        return _kernel_base(self.kind, np.asarray(x, dtype=float) / self.bandwidth) / self.bandwidth

    @property
    def support_radius(self):
        return _KERNEL_SUPPORT[self.kind] * self.bandwidth


@dataclass(frozen=True)
class ScatterObs:
    """Scattered observations: ``mats[j]`` observed at ``times[j]`` on flow ``flow_ids[j]``."""

    times: np.ndarray
    mats: np.ndarray
    flow_ids: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        mats = np.asarray(self.mats)
        ids = np.asarray(self.flow_ids, dtype=int)
        if times.ndim != 1:
            raise ValidationError("times must be 1-D")
        if mats.ndim != 3 or mats.shape[-1] != mats.shape[-2]:
            raise DimMismatchError(f"mats must have shape (N, d, d), got {mats.shape}")
        if not (times.size == mats.shape[0] == ids.size):
            raise DimMismatchError("times, mats and flow_ids must have equal length")
        if times.size and (times.min() < 0.0 or times.max() > 1.0):
            raise ValidationError("observation times must lie in [0, 1]")
        linalg.check_finite(mats)
        linalg.check_hermitian(mats)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mats", mats)
        object.__setattr__(self, "flow_ids", ids)

    @classmethod
    def from_flowset(cls, flows, keep=None):
        """Scatter a FlowSet; ``keep[i, j] = False`` drops cell (flow i, time j)."""
        n, m = flows.n_flows, flows.n_times
        if keep is None:
            keep = np.ones((n, m), dtype=bool)
        keep = np.asarray(keep, dtype=bool)
        ii, jj = np.nonzero(keep)
        return cls(flows.grid[jj], flows.mats[ii, jj], ii)

    @property
    def n_obs(self):
        return self.times.size

    @property
    def dim(self):
        return self.mats.shape[-1]


def nw_smooth(obs, kernel, eval_grid):
    """Kernel-weighted Euclidean average of the observations, PSD-projected.

    Raises :class:`EmptyWindowError` listing every evaluation point whose
    kernel window contains no observation.
    """
    eval_grid = np.asarray(eval_grid, dtype=float)
    wts = kernel.weight(obs.times[None, :] - eval_grid[:, None])
    mass = wts.sum(axis=1)
    empty = np.nonzero(mass <= 0.0)[0]
    if empty.size:
        raise EmptyWindowError(eval_grid[empty].tolist())
    avg = np.einsum("ej,jab->eab", wts / mass[:, None], obs.mats)
    avg = 0.5 * (avg + ct(avg))
    return Flow(eval_grid, linalg.project_psd(avg, check=False))


def lfr_weights(times, t, kernel):
    """Signed local-linear weights at evaluation point ``t``.

    Satisfies ``(1/r) sum_j s_j = 1`` and ``(1/r) sum_j s_j (T_j - t) = 0``
    when the local moment matrix is nonsingular; otherwise falls back to
    Nadaraya-Watson weights and emits :class:`SingularMomentsWarning`.
    """
    times = np.asarray(times, dtype=float)
    r = times.size
    dt = times - t
    k = kernel.weight(dt)
    mu0 = k.mean()
    if mu0 <= 0.0:
        raise EmptyWindowError([float(t)])
    mu1 = (k * dt).mean()
    mu2 = (k * dt * dt).mean()
    denom = mu0 * mu2 - mu1 * mu1
    scale = max(mu0 * mu2, mu1 * mu1, 1e-300)
    if denom <= 1e-12 * scale:
        warnings.warn(
            f"singular local-linear moments at t={t:.6g}; using constant-fit weights",
            SingularMomentsWarning,
        )
        return k / mu0
    return k * (mu2 - mu1 * dt) / denom


@dataclass
class LfrDiagnostics:
    """Per-evaluation-point flags raised by :func:`lfr_estimate`."""

    flags: list = field(default_factory=list)  # (eval_index, flag)

    def add(self, index, flag):
        self.flags.append((index, flag))

    @property
    def ok(self):
        return not self.flags


def lfr_estimate(obs, kernel, eval_grid, gd_config=None, return_diagnostics=False):
    """Local Frechet regression: pointwise weighted barycenters.

    At each evaluation point the signed local-linear weights feed the
    fixed-point barycenter solver.  If the signed iteration leaves the
    PSD cone or diverges, the point is recomputed with the negative
    weights clipped at zero and flagged ``"clipped"``; severely
    cancelling weights are flagged ``"ill_conditioned"`` and solver
    non-convergence ``"not_converged"``.
    """
    eval_grid = np.asarray(eval_grid, dtype=float)
    cfg = gd_config or GdConfig()
    diags = LfrDiagnostics()
    mats = np.empty(
        (eval_grid.size,) + obs.mats.shape[1:],
        dtype=np.promote_types(obs.mats.dtype, float),
    )
    empty = []
    for e, t in enumerate(eval_grid):
        try:
            s = lfr_weights(obs.times, t, kernel)
        except EmptyWindowError:
            empty.append(float(t))
            continue
        signed, total = s.sum(), np.abs(s).sum()
        if signed < 0.1 * total:
            diags.add(e, "ill_conditioned")
            warnings.warn(
                f"signed weight mass at t={t:.6g} is below 10% of absolute mass",
                NegativeWeightWarning,
            )
        clipped = signed <= 0.0
        if clipped:
            s = np.maximum(s, 0.0)
        try:
            mean, trace = frechet_mean_gd(obs.mats, cfg, weights=s)
        except (KernelNestingError, NonConvergenceError):
            if clipped:
                raise
            clipped = True
            s = np.maximum(s, 0.0)
            if s.sum() <= 0.0:
                empty.append(float(t))
                continue
            mean, trace = frechet_mean_gd(obs.mats, cfg, weights=s)
        if clipped:
            diags.add(e, "clipped")
        if not trace.converged:
            diags.add(e, "not_converged")
        mats[e] = mean
    if empty:
        raise EmptyWindowError(empty)
    result = Flow(eval_grid, linalg.project_psd(mats, check=False))
    return (result, diags) if return_diagnostics else result


@dataclass(frozen=True)
class CovSurface:
    """Smoothed covariance surface of embedded tangent fields.

    ``values[p, q]`` is the 4-index tensor estimate of
    ``E[chi(s_p) (x) conj(chi(t_q))]`` with shape (d, d, d, d); the
    surface of a symmetric sample satisfies
    ``values[p, q][a, b, c, e] approx conj(values[q, p][c, e, a, b])``.
    """

    grid_s: np.ndarray
    grid_t: np.ndarray
    values: np.ndarray

    @property
    def dim(self):
        return self.values.shape[-1]

    def diag_block(self, index):
        """Hermitised, PSD-projected d^2 x d^2 diagonal block at grid point ``index``."""
        if not np.array_equal(self.grid_s, self.grid_t):
            raise ValidationError("diagonal blocks need matching s and t grids")
        d = self.dim
        block = self.values[index, index].reshape(d * d, d * d)
        block = 0.5 * (block + block.conj().T)
        return linalg.project_psd(block, check=False)


def surface_smooth_pairs(times_s, times_t, values, kernel, grid_s, grid_t=None,
                         sample_weights=None):
    """Local-linear surface smoother on explicit (j != l) pair data.

    Parameters
    ----------
    times_s, times_t : ndarray, shape (P,)
        First and second observation time of each pair.
    values : ndarray, shape (P, ...)
        Pair responses; any trailing shape (the fit is linear in them).
    kernel : Kernel
    grid_s, grid_t : ndarray
        Evaluation grids (``grid_t`` defaults to ``grid_s``).
    sample_weights : ndarray, optional
        Per-pair weights (uniform by default); only their ratios matter.

    Returns
    -------
    CovSurface

    Notes
    -----
    At each (s, t) the moment statistics

        S_ab = sum_p w_p K_h(ts_p - s) K_h(tt_p - t) x_p^a y_p^b,
        R_ab = sum_p w_p K_h(ts_p - s) K_h(tt_p - t) x_p^a y_p^b values_p

    with x = (ts - s)/h, y = (tt - t)/h enter the closed form

        ((S20 S02 - S11^2) R00 - (S10 S02 - S01 S11) R10
          + (S10 S11 - S01 S20) R01) / D,
        D = (S20 S02 - S11^2) S00 - (S10 S02 - S01 S11) S10
          + (S10 S11 - S01 S20) S01

    which is the intercept of the weighted least-squares plane fit.
    """
    ts = np.asarray(times_s, dtype=float)
    tt = np.asarray(times_t, dtype=float)
    vals = np.asarray(values)
    if ts.shape != tt.shape or ts.ndim != 1 or vals.shape[0] != ts.size:
        raise DimMismatchError("pair times and values must align on the first axis")
    if ts.size == 0:
        raise ValidationError("no pairs supplied")
    grid_s = np.asarray(grid_s, dtype=float)
    grid_t = grid_s if grid_t is None else np.asarray(grid_t, dtype=float)
    wts = (
        np.full(ts.size, 1.0 / ts.size)
        if sample_weights is None
        else np.asarray(sample_weights, dtype=float)
    )
    h = kernel.bandwidth

    xs = (ts[None, :] - grid_s[:, None]) / h          # (ns, P)
    yt = (tt[None, :] - grid_t[:, None]) / h          # (nt, P)
    ks = _kernel_base(kernel.kind, xs) / h * wts[None, :]
    kt = _kernel_base(kernel.kind, yt) / h
    a_s = np.stack([ks, ks * xs, ks * xs * xs])        # a = 0, 1, 2
    b_t = np.stack([kt, kt * yt, kt * yt * yt])        # b = 0, 1, 2

    s_ab = np.einsum("asp,btp->abst", a_s, b_t)
    flat = vals.reshape(ts.size, -1)
    r_ab = np.einsum("asp,btp,pv->abstv", a_s[:2], b_t[:2], flat)

    c1 = s_ab[2, 0] * s_ab[0, 2] - s_ab[1, 1] ** 2
    c2 = s_ab[1, 0] * s_ab[0, 2] - s_ab[0, 1] * s_ab[1, 1]
    c3 = s_ab[1, 0] * s_ab[1, 1] - s_ab[0, 1] * s_ab[2, 0]
    denom = c1 * s_ab[0, 0] - c2 * s_ab[1, 0] + c3 * s_ab[0, 1]
    scale = np.maximum.reduce(
        [
            np.abs(c1 * s_ab[0, 0]),
            np.abs(c2 * s_ab[1, 0]),
            np.abs(c3 * s_ab[0, 1]),
            np.full_like(denom, 1e-300),
        ]
    )
    bad = np.abs(denom) <= 1e-14 * scale
    if np.any(bad):
        ps, pt = np.nonzero(bad)
        points = [(float(grid_s[i]), float(grid_t[j])) for i, j in zip(ps, pt)]
        raise SingularDesignError(
            f"singular local-linear design at {points[:5]}"
            + ("..." if len(points) > 5 else "")
        )
    numer = (
        c1[..., None] * r_ab[0, 0]
        - c2[..., None] * r_ab[1, 0]
        + c3[..., None] * r_ab[0, 1]
    )
    out = numer / denom[..., None]
    return CovSurface(grid_s, grid_t, out.reshape(grid_s.size, grid_t.size, *vals.shape[1:]))


def cov_surface_smooth(times, tangents, flow_ids, kernel, grid_s, grid_t=None):
    """Local-linear covariance surface from per-observation embedded tangents.

    Enumerates within-flow cross pairs (j != l) of the scattered tangents
    ``chi_ij`` observed at ``times``; the pair response is the outer
    product ``chi_ij (x) conj(chi_il)``.  Flows contribute with weight
    ``1 / (n r_i (r_i - 1))`` so unbalanced designs stay comparable.
    """
    times = np.asarray(times, dtype=float)
    tangents = np.asarray(tangents)
    flow_ids = np.asarray(flow_ids, dtype=int)
    if tangents.ndim != 3 or tangents.shape[-1] != tangents.shape[-2]:
        raise DimMismatchError(f"tangents must have shape (N, d, d), got {tangents.shape}")
    pair_s, pair_t, pair_vals, pair_w = [], [], [], []
    uniq = np.unique(flow_ids)
    for i in uniq:
        idx = np.nonzero(flow_ids == i)[0]
        r = idx.size
        if r < 2:
            continue
        jj, ll = np.meshgrid(idx, idx, indexing="ij")
        off = ~np.eye(r, dtype=bool)
        jj, ll = jj[off], ll[off]
        pair_s.append(times[jj])
        pair_t.append(times[ll])
        pair_vals.append(
            np.einsum("pab,pce->pabce", tangents[jj], np.conjugate(tangents[ll]))
        )
        pair_w.append(np.full(jj.size, 1.0 / (r * (r - 1))))
    if not pair_s:
        raise ValidationError("need at least one flow with two observations")
    wts = np.concatenate(pair_w) / uniq.size
    return surface_smooth_pairs(
        np.concatenate(pair_s), np.concatenate(pair_t), np.concatenate(pair_vals),
        kernel, grid_s, grid_t, sample_weights=wts,
    )


def select_bandwidth(obs, candidates, kind="epanechnikov", method="nw",
                     gd_config=None):
    """Leave-one-flow-out bandwidth search for the mean smoothers.

    For each candidate ``h`` every flow is predicted at its own
    observation times from the remaining flows, and the squared
    Bures-Wasserstein errors are averaged.  Candidates whose windows
    leave some point uncovered score infinity.

    Returns
    -------
    best : float
    table : list of (bandwidth, score) rows
    """
    candidates = [float(h) for h in candidates]
    if not candidates:
        raise ValidationError("no bandwidth candidates supplied")
    uniq = np.unique(obs.flow_ids)
    if uniq.size < 2:
        raise ValidationError("leave-one-flow-out selection needs at least two flows")
    table = []
    for h in candidates:
        kernel = Kernel(kind, h)
        err, count = 0.0, 0
        try:
            for i in uniq:
                mask = obs.flow_ids == i
                rest = ScatterObs(obs.times[~mask], obs.mats[~mask], obs.flow_ids[~mask])
                tgrid = obs.times[mask]
                if method == "nw":
                    fit = nw_smooth(rest, kernel, np.unique(tgrid))
                else:
                    fit = lfr_estimate(rest, kernel, np.unique(tgrid), gd_config)
                lookup = {t: k for k, t in enumerate(fit.grid)}
                for j in np.nonzero(mask)[0]:
                    est = fit.mats[lookup[obs.times[j]]]
                    err += bw_distance(est, obs.mats[j], check=False) ** 2
                    count += 1
            table.append((h, err / max(count, 1)))
        except EmptyWindowError:
            table.append((h, np.inf))
    best = min(table, key=lambda row: row[1])[0]
    return best, table


class NadarayaWatsonSmoother(BaseEstimator):
    """Estimator wrapper around :func:`nw_smooth`.

    ``fit`` stores the scattered observations; ``predict`` evaluates the
    smoothed flow on a grid.
    """

    def __init__(self, bandwidth=0.1, kernel="epanechnikov"):
        self.bandwidth = bandwidth
        self.kernel = kernel

    def fit(self, times, mats, flow_ids=None):
        times = np.asarray(times, dtype=float)
        if flow_ids is None:
            flow_ids = np.zeros(times.size, dtype=int)
        self.obs_ = ScatterObs(times, mats, flow_ids)
        return self

    def predict(self, eval_grid):
        return nw_smooth(self.obs_, Kernel(self.kernel, self.bandwidth), eval_grid)


class LocalFrechetSmoother(BaseEstimator):
    """Estimator wrapper around :func:`lfr_estimate`."""

    def __init__(self, bandwidth=0.1, kernel="epanechnikov", max_iter=200, tol=1e-8):
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, times, mats, flow_ids=None):
        times = np.asarray(times, dtype=float)
        if flow_ids is None:
            flow_ids = np.zeros(times.size, dtype=int)
        self.obs_ = ScatterObs(times, mats, flow_ids)
        return self

    def predict(self, eval_grid):
        cfg = GdConfig(max_iter=self.max_iter, tol=self.tol)
        flow, self.diagnostics_ = lfr_estimate(
            self.obs_, Kernel(self.kernel, self.bandwidth), eval_grid, cfg,
            return_diagnostics=True,
        )
        return flow


def surface_pca(surface, n_components=None, weights=None):
    """Eigenvalues and eigenfields of the integral operator of a square surface.

    Discretises the operator with quadrature weights on the shared grid,
    Hermitises it, and returns descending eigenvalues with eigenfields
    normalised in the weighted Frobenius norm.
    """
    if not np.array_equal(surface.grid_s, surface.grid_t):
        raise ValidationError("surface PCA needs matching s and t grids")
    grid = surface.grid_s
    m, d = grid.size, surface.dim
    if weights is None:
        weights = trapezoid_weights(grid)
    sw = np.sqrt(weights)
    big = surface.values.transpose(0, 2, 3, 1, 4, 5).reshape(m * d * d, m * d * d)
    scal = np.repeat(sw, d * d)
    big = big * scal[:, None] * scal[None, :]
    big = 0.5 * (big + big.conj().T)
    w, v = np.linalg.eigh(big)
    w, v = w[::-1], v[:, ::-1]
    k = w.size if n_components is None else min(n_components, w.size)
    fields = v[:, :k].T.reshape(k, m, d, d) / sw[None, :, None, None]
    return w[:k], fields
