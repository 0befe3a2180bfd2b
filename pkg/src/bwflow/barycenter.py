"""Frechet means of covariance samples and of flows.

The deterministic solver iterates the fixed-point map

    T_k = sum_i w_i * T(M_k -> F_i),    M_{k+1} = T_k M_k T_k

which is a gradient-descent step of the Frechet functional
``sum_i w_i d2(M, F_i)`` with unit step.  Convergence is declared when
the averaged map deviates from the identity by at most ``tol`` in
operator norm on the range of the current iterate (for injective
iterates this is exactly ``||T_k - I||_inf``).  When every sample is
singular the iterate may settle on a lower-rank stratum; directions
that leave the range are dropped by the pseudo-inverse, which keeps the
rank decision stable, and the residual is then measured on that
stratum.  The stochastic variant
replaces the average with a single resampled summand and a decaying
step ``eta_k = a / (k + b)``, ``k = 0, 1, ...`` clipped into (0, 1].

Flows are averaged pointwise over the grid, optionally warm-starting
each grid point at the previous solution (sequential) or solving grid
points independently in parallel.
"""

import numbers
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import linalg
from .exceptions import (
    AllDegenerateError,
    NonConvergenceError,
    PointwiseFailureError,
    ValidationError,
)
from .flow import Flow, FlowSet
from .linalg import PSD_TOL, RANK_TOL, ct


@dataclass
class GdConfig:
    """Settings for the deterministic fixed-point solver."""

    max_iter: int = 200
    tol: float = 1e-8
    init: "str | int | np.ndarray" = "euclidean_mean"
    rank_tol: float = RANK_TOL
    psd_tol: float = PSD_TOL


@dataclass
class SgdConfig:
    """Settings for the stochastic solver (uniform resampling with replacement)."""

    steps: int = 5000
    step_a: float = 2.0
    step_b: float = 2.0
    seed: int = 0
    init: "str | int | np.ndarray" = "euclidean_mean"
    rank_tol: float = RANK_TOL
    psd_tol: float = PSD_TOL


@dataclass
class GdTrace:
    """Per-iteration record: Frechet functional and first-order residual."""

    functional: np.ndarray = field(default_factory=lambda: np.empty(0))
    residual: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = False
    n_iter: int = 0

    def rows(self):
        return [
            (k, float(self.functional[k]), float(self.residual[k]))
            for k in range(self.n_iter)
        ]


@dataclass
class SgdTrace:
    """Per-step record: step size and single-sample transport residual."""

    step_size: np.ndarray = field(default_factory=lambda: np.empty(0))
    residual: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_iter: int = 0

    def rows(self):
        return [
            (k, float(self.step_size[k]), float(self.residual[k]))
            for k in range(self.n_iter)
        ]


def euclidean_mean(samples, weights=None):
    """Weighted entrywise average of a stack of matrices."""
    samples = np.asarray(samples)
    if weights is None:
        return samples.mean(axis=0)
    weights = np.asarray(weights, dtype=float)
    return np.einsum("i,i...->...", weights / weights.sum(), samples)


def _as_stack(samples):
    samples = np.asarray(samples)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.ndim != 3 or samples.shape[-1] != samples.shape[-2]:
        raise ValidationError(f"expected samples of shape (n, d, d), got {samples.shape}")
    return samples

def _is_injective(m, rank_tol):
    w = np.linalg.eigvalsh(m)
    return w[0] > rank_tol * max(w[-1], 0.0) and w[-1] > 0.0


def _resolve_init(samples, init, rank_tol):
    """Starting matrix plus a flag for whether any sample is injective."""
    n, d = samples.shape[0], samples.shape[-1]
    eigs = np.linalg.eigvalsh(samples)
    any_pd = bool(np.any(eigs[:, 0] > rank_tol * np.maximum(eigs[:, -1], 0.0)))
    if isinstance(init, str):
        if init != "euclidean_mean":
            raise ValidationError(f"unknown init {init!r}")
        m0 = euclidean_mean(samples)
    elif isinstance(init, numbers.Integral):
        if not 0 <= init < n:
            raise ValidationError(f"init sample index {init} out of range [0, {n})")
        m0 = samples[int(init)].copy()
    else:
        m0 = np.asarray(init)
        if m0.shape != (d, d):
            raise ValidationError(f"explicit init must have shape ({d}, {d})")
        linalg.check_hermitian(m0)
    if not any_pd and not _is_injective(m0, rank_tol):
        raise AllDegenerateError(
            "no positive definite sample and the starting point is singular"
        )
    return m0


def _solver_state(m, rank_tol):
    """Eigen-factorisations of the iterate reused across the update."""
    w, v = linalg.hermitian_eig(m, check=False)
    w = np.maximum(w, 0.0)
    mask = w > rank_tol * max(w[0], 0.0)
    rm = linalg._assemble(np.sqrt(w), v)
    rim = linalg._assemble(np.where(mask, 1.0 / np.sqrt(np.where(mask, w, 1.0)), 0.0), v)
    proj = None if mask.all() else linalg._assemble(mask.astype(w.dtype), v)
    return rm, rim, proj


def frechet_mean_gd(samples, config=None, weights=None):
    """Frechet mean of matrices by the averaged-transport fixed point.

    Parameters
    ----------
    samples : ndarray, shape (n, d, d)
        PSD matrices (a list of matrices is accepted).
    config : GdConfig, optional
    weights : ndarray, optional
        Averaging weights, normalised by their (signed) sum.  Uniform by
        default.  Negative entries are allowed for local regression; with
        signed weights monotonicity of the functional is not guaranteed.

    Returns
    -------
    mean : ndarray, shape (d, d)
    trace : GdTrace
        Functional value and residual per iteration; ``converged`` is
        False if ``max_iter`` was exhausted (no exception is raised).
    """
    cfg = config or GdConfig()
    samples = _as_stack(samples)
    linalg.validate_cov_matrix(samples, cfg.psd_tol)
    n = samples.shape[0]
    if weights is None:
        wts = np.full(n, 1.0 / n)
    else:
        wts = np.asarray(weights, dtype=float)
        if wts.shape != (n,):
            raise ValidationError(f"weights must have shape ({n},), got {wts.shape}")
        total = wts.sum()
        if total <= 0.0:
            raise ValidationError("weights must have positive total mass")
        wts = wts / total

    m = _resolve_init(samples, cfg.init, cfg.rank_tol).astype(
        np.promote_types(samples.dtype, float)
    )
    tr_samples = np.trace(samples, axis1=-2, axis2=-1).real
    eye = np.eye(samples.shape[-1], dtype=m.dtype)

    functional = np.empty(cfg.max_iter)
    residual = np.empty(cfg.max_iter)
    trace = GdTrace(functional, residual)
    for k in range(cfg.max_iter):
        rm, rim, proj = _solver_state(m, cfg.rank_tol)
        inner_w, inner_v = np.linalg.eigh(rm @ samples @ rm)
        inner_w = np.maximum(inner_w, 0.0)
        cross = np.sqrt(inner_w).sum(axis=-1)
        functional[k] = float(
            np.sum(wts * (np.trace(m).real + tr_samples - 2.0 * cross))
        )
        mid = (inner_v * np.sqrt(inner_w)[..., None, :]) @ ct(inner_v)
        tmaps = rim @ mid @ rim
        tbar = np.einsum("i,ijk->jk", wts, tmaps)
        tbar = 0.5 * (tbar + ct(tbar))
        delta = tbar - eye
        if proj is not None:
            delta = proj @ delta @ proj
        residual[k] = float(np.abs(np.linalg.eigvalsh(delta)).max())
        trace.n_iter = k + 1
        if not np.isfinite(functional[k]) or not np.isfinite(residual[k]):
            trace.functional = functional[: k + 1]
            trace.residual = residual[: k + 1]
            raise NonConvergenceError("iteration diverged to non-finite values", trace)
        if residual[k] <= cfg.tol:
            trace.converged = True
            break
        m = tbar @ m @ tbar
        m = 0.5 * (m + ct(m))
    trace.functional = functional[: trace.n_iter]
    trace.residual = residual[: trace.n_iter]
    return m, trace


def frechet_mean_sgd(samples, config=None):
    """Frechet mean by stochastic transport steps with decaying step size.

    Resamples uniformly with replacement; with the default schedule
    ``eta_k = 2 / (k + 2)`` the first step is a full pushforward.  Fixed
    seeds give bit-identical reruns.
    """
    cfg = config or SgdConfig()
    samples = _as_stack(samples)
    linalg.validate_cov_matrix(samples, cfg.psd_tol)
    n = samples.shape[0]
    m = _resolve_init(samples, cfg.init, cfg.rank_tol).astype(
        np.promote_types(samples.dtype, float)
    )
    eye = np.eye(samples.shape[-1], dtype=m.dtype)
    rng = np.random.default_rng(cfg.seed)
    picks = rng.integers(0, n, size=cfg.steps)
    step_size = np.empty(cfg.steps)
    residual = np.empty(cfg.steps)
    for k in range(cfg.steps):
        eta = min(cfg.step_a / (k + cfg.step_b), 1.0)
        rm, rim, proj = _solver_state(m, cfg.rank_tol)
        y = samples[picks[k]]
        mid = linalg.sqrt_psd(rm @ y @ rm, cfg.psd_tol, check=False)
        t = rim @ mid @ rim
        delta = t - eye
        if proj is not None:
            delta = proj @ delta @ proj
        step_size[k] = eta
        residual[k] = float(np.abs(np.linalg.eigvalsh(delta)).max())
        s = (1.0 - eta) * eye + eta * t
        m = s @ m @ s
        m = 0.5 * (m + ct(m))
    return m, SgdTrace(step_size, residual, cfg.steps)


def frechet_mean_flow(
    flows, algo="gd", gd_config=None, sgd_config=None, warm_start=True, n_jobs=1
):
    """Pointwise Frechet mean of a FlowSet.

    With ``warm_start`` the solver walks the grid left to right, starting
    each point at the previous solution (sequential by construction).  A
    warm start from a full-rank neighbour can cycle without converging
    when the samples at a point are rank deficient, so a point that fails
    to converge is retried from the standard cold initialiser and the
    better of the two runs is kept.  Without ``warm_start``, grid points
    are independent and are solved in parallel when ``n_jobs > 1``.
    Failures carry the offending grid index.

    Returns
    -------
    mean : Flow
    traces : list of GdTrace or SgdTrace, one per grid point
    """
    if not isinstance(flows, FlowSet):
        flows = FlowSet.from_flows(flows)
    if algo not in ("gd", "sgd"):
        raise ValidationError(f"unknown algorithm {algo!r}")
    m = flows.n_times

    def solve(j, init_override=None):
        try:
            if algo == "gd":
                cfg = gd_config or GdConfig()
                init = cfg.init if init_override is None else init_override
                cfg = GdConfig(cfg.max_iter, cfg.tol, init, cfg.rank_tol, cfg.psd_tol)
                return frechet_mean_gd(flows.mats[:, j], cfg)
            cfg = sgd_config or SgdConfig()
            init = cfg.init if init_override is None else init_override
            cfg = SgdConfig(cfg.steps, cfg.step_a, cfg.step_b, cfg.seed + j,
                            init, cfg.rank_tol, cfg.psd_tol)
            return frechet_mean_sgd(flows.mats[:, j], cfg)
        except Exception as err:  # attach the grid location
            raise PointwiseFailureError(j, err) from err

    results = [None] * m
    if warm_start:
        prev = None
        for j in range(m):
            results[j] = solve(j, prev)
            if prev is not None and not getattr(results[j][1], "converged", True):
                retry = solve(j)
                if (getattr(retry[1], "converged", False)
                        or retry[1].residual[-1] < results[j][1].residual[-1]):
                    results[j] = retry
            prev = results[j][0]
    elif n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(solve, range(m)))
    else:
        for j in range(m):
            results[j] = solve(j)
    mats = np.stack([r[0] for r in results])
    traces = [r[1] for r in results]
    return Flow(flows.grid, mats), traces


class FrechetMeanFlow(BaseEstimator):
    """Estimator wrapper: fit a mean flow to a FlowSet.

    Parameters mirror :class:`GdConfig` / :class:`SgdConfig`; after
    ``fit`` the solution is in ``mean_flow_`` with per-grid-point traces
    in ``traces_``.
    """

    def __init__(self, algo="gd", max_iter=200, tol=1e-8, steps=5000,
                 step_a=2.0, step_b=2.0, seed=0, warm_start=True, n_jobs=1,
                 rank_tol=RANK_TOL):
        self.algo = algo
        self.max_iter = max_iter
        self.tol = tol
        self.steps = steps
        self.step_a = step_a
        self.step_b = step_b
        self.seed = seed
        self.warm_start = warm_start
        self.n_jobs = n_jobs
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        gd = GdConfig(max_iter=self.max_iter, tol=self.tol, rank_tol=self.rank_tol)
        sgd = SgdConfig(steps=self.steps, step_a=self.step_a, step_b=self.step_b,
                        seed=self.seed, rank_tol=self.rank_tol)
        self.mean_flow_, self.traces_ = frechet_mean_flow(
            X, algo=self.algo, gd_config=gd, sgd_config=sgd,
            warm_start=self.warm_start, n_jobs=self.n_jobs,
        )
        self.converged_ = all(
            getattr(t, "converged", True) for t in self.traces_
        )
        return self

    def predict(self, t):
        """Evaluate the fitted mean flow at arbitrary times."""
        from .flow import mccann_eval

        return mccann_eval(self.mean_flow_, t)
