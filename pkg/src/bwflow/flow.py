"""Time-indexed flows of covariance matrices on a shared grid.

A :class:`Flow` couples a strictly increasing grid in [0, 1] with one
PSD matrix per grid point.  A :class:`FlowSet` stacks ``n`` flows on one
shared grid.  Distances between flows integrate the pointwise metric with
trapezoidal quadrature::

    dist(A, B)^2 = sum_j w_j * d2(A_j, B_j)

and intermediate times are reached by piecewise-geodesic (McCann)
interpolation between the bracketing grid points.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry, linalg
from .exceptions import DimMismatchError, GridMismatchError, ValidationError
from .linalg import PSD_TOL, RANK_TOL


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError(f"grid must be a non-empty 1-D array, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValidationError("grid contains non-finite values")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValidationError("grid values must lie in [0, 1]")
    if grid.size > 1 and not np.all(np.diff(grid) > 0.0):
        raise ValidationError("grid must be strictly increasing")
    return grid


@dataclass(frozen=True)
class Flow:
    """One flow: ``mats[j]`` is the covariance at time ``grid[j]``.

    Construction checks the grid, finiteness and Hermitian symmetry.
    Positive semi-definiteness is asserted separately by
    :func:`validate_flowset` (or on file ingestion), since it requires a
    full eigendecomposition.
    """

    grid: np.ndarray
    mats: np.ndarray

    def __post_init__(self):
        grid = _check_grid(self.grid)
        mats = np.asarray(self.mats)
        if mats.ndim != 3 or mats.shape[-1] != mats.shape[-2]:
            raise DimMismatchError(f"mats must have shape (m, d, d), got {mats.shape}")
        if mats.shape[0] != grid.size:
            raise DimMismatchError(
                f"{grid.size} grid points but {mats.shape[0]} matrices"
            )
        linalg.check_finite(mats)
        linalg.check_hermitian(mats)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mats", mats)

    @property
    def n_times(self):
        return self.grid.size

    @property
    def dim(self):
        return self.mats.shape[-1]

    @property
    def scalar_kind(self):
        return "complex" if np.iscomplexobj(self.mats) else "real"


@dataclass(frozen=True)
class FlowSet:
    """``n`` flows sharing one grid; ``mats`` has shape (n, m, d, d)."""

    grid: np.ndarray
    mats: np.ndarray

    def __post_init__(self):
        grid = _check_grid(self.grid)
        mats = np.asarray(self.mats)
        if mats.ndim != 4 or mats.shape[-1] != mats.shape[-2]:
            raise DimMismatchError(f"mats must have shape (n, m, d, d), got {mats.shape}")
        if mats.shape[1] != grid.size:
            raise DimMismatchError(
                f"{grid.size} grid points but {mats.shape[1]} matrices per flow"
            )
        linalg.check_finite(mats)
        linalg.check_hermitian(mats)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mats", mats)

    @classmethod
    def from_flows(cls, flows):
        flows = list(flows)
        if not flows:
            raise ValidationError("empty flow collection")
        grid = flows[0].grid
        dim = flows[0].dim
        for k, fl in enumerate(flows[1:], start=1):
            if fl.dim != dim:
                raise DimMismatchError(
                    f"flow 0 has dimension {dim} but flow {k} has {fl.dim}"
                )
            if not np.array_equal(fl.grid, grid):
                raise GridMismatchError(f"flow {k} is on a different grid than flow 0")
        return cls(grid, np.stack([fl.mats for fl in flows]))

    def __len__(self):
        return self.mats.shape[0]

    def __getitem__(self, i):
        return Flow(self.grid, self.mats[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def n_flows(self):
        return self.mats.shape[0]

    @property
    def n_times(self):
        return self.grid.size

    @property
    def dim(self):
        return self.mats.shape[-1]

    @property
    def scalar_kind(self):
        return "complex" if np.iscomplexobj(self.mats) else "real"


def trapezoid_weights(grid):
    """Trapezoidal quadrature weights for a (possibly uneven) grid.

    Nonnegative, summing to the grid span; a single-point grid gets
    weight 1 so that pointwise and integrated criteria coincide.
    """
    grid = _check_grid(grid)
    if grid.size == 1:
        return np.ones(1)
    w = np.empty(grid.size)
    d = np.diff(grid)
    w[0] = d[0] / 2.0
    w[-1] = d[-1] / 2.0
    w[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    return w


def check_shared_grid(a, b):
    if a.grid is not b.grid and not np.array_equal(a.grid, b.grid):
        raise GridMismatchError(
            "flows are on different grids; resample with mccann_eval first"
        )


def flow_distance(a, b, psd_tol=PSD_TOL, check=True, squared=False):
    """Integrated Bures-Wasserstein distance between two flows.

    Both flows must share the same grid (resample first otherwise).
    """
    check_shared_grid(a, b)
    d2 = geometry.bw_distance(a.mats, b.mats, psd_tol=psd_tol, check=check, squared=True)
    val = float(np.sum(trapezoid_weights(a.grid) * d2))
    return val if squared else float(np.sqrt(max(val, 0.0)))


def mccann_eval(flow, t, rank_tol=RANK_TOL, check=False):
    """Evaluate a flow at off-grid times by piecewise-geodesic interpolation.

    Times outside the grid are clamped to the endpoints.  A scalar ``t``
    returns one ``(d, d)`` matrix; an array returns a stack.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    ts = np.atleast_1d(t)
    grid = flow.grid
    out = np.empty((ts.size, flow.dim, flow.dim), dtype=flow.mats.dtype)
    for i, ti in enumerate(ts):
        if ti <= grid[0]:
            out[i] = flow.mats[0]
            continue
        if ti >= grid[-1]:
            out[i] = flow.mats[-1]
            continue
        j = int(np.searchsorted(grid, ti, side="right") - 1)
        if grid[j] == ti:
            out[i] = flow.mats[j]
            continue
        lam = (ti - grid[j]) / (grid[j + 1] - grid[j])
        out[i] = geometry.geodesic(
            flow.mats[j], flow.mats[j + 1], lam, rank_tol=rank_tol, check=check
        )
    return out[0] if scalar else out


def resample_flow(flow, new_grid, rank_tol=RANK_TOL):
    """Flow evaluated on ``new_grid`` via :func:`mccann_eval`."""
    return Flow(new_grid, mccann_eval(flow, np.asarray(new_grid, dtype=float), rank_tol))


@dataclass
class FlowDiagnostics:
    """Validation report for a flow collection.

    ``structural`` lists shape/grid incompatibilities; the per-matrix
    arrays have shape (n_flows, n_times) and ``violations`` holds
    ``(flow_index, time_index, kind, value)`` tuples.
    """

    structural: list = field(default_factory=list)
    min_eig: np.ndarray | None = None
    trace: np.ndarray | None = None
    herm_residual: np.ndarray | None = None
    violations: list = field(default_factory=list)
    psd_tol: float = PSD_TOL

    @property
    def ok(self):
        return not self.structural and not self.violations


def validate_flowset(obj, psd_tol=PSD_TOL, herm_tol=linalg.HERM_TOL):
    """Diagnose a FlowSet, a list of flows, or a raw (n, m, d, d) array.

    Unlike the constructors this never raises on bad content: structural
    problems (mismatched dimensions or grids) and pointwise violations
    (non-finite, non-Hermitian, negative eigenvalues) are collected in the
    returned :class:`FlowDiagnostics`.
    """
    diag = FlowDiagnostics(psd_tol=psd_tol)
    if isinstance(obj, FlowSet):
        mats = obj.mats
    elif isinstance(obj, Flow):
        mats = obj.mats[None]
    elif isinstance(obj, np.ndarray):
        if obj.ndim != 4 or obj.shape[-1] != obj.shape[-2]:
            diag.structural.append(f"array must have shape (n, m, d, d), got {obj.shape}")
            return diag
        mats = obj
    else:
        flows = list(obj)
        if not flows:
            diag.structural.append("empty flow collection")
            return diag
        dims = {fl.dim for fl in flows}
        if len(dims) > 1:
            diag.structural.append(f"mixed matrix dimensions {sorted(dims)}")
        grids_ok = all(np.array_equal(fl.grid, flows[0].grid) for fl in flows[1:])
        if not grids_ok:
            diag.structural.append("flows do not share a common grid")
        if diag.structural:
            return diag
        mats = np.stack([fl.mats for fl in flows])

    n, m = mats.shape[:2]
    diag.trace = np.trace(mats, axis1=-2, axis2=-1).real
    diag.herm_residual = np.abs(mats - linalg.ct(mats)).max(axis=(-2, -1))
    finite = np.isfinite(mats).all(axis=(-2, -1))
    diag.min_eig = np.full((n, m), np.nan)
    scale = np.abs(mats).max(axis=(-2, -1))
    for i in range(n):
        for j in range(m):
            if not finite[i, j]:
                diag.violations.append((i, j, "non_finite", np.nan))
                continue
            if diag.herm_residual[i, j] > herm_tol * max(scale[i, j], 1e-300):
                diag.violations.append(
                    (i, j, "non_hermitian", float(diag.herm_residual[i, j]))
                )
                continue
            w = np.linalg.eigvalsh(0.5 * (mats[i, j] + linalg.ct(mats[i, j])))
            diag.min_eig[i, j] = w[0]
            bound = psd_tol * max(np.abs(w).max(), 1e-300)
            if w[0] < -bound:
                diag.violations.append((i, j, "not_psd", float(w[0])))
    return diag
