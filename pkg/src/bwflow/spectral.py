"""Spectral density flows of stationary multivariate series.

Lag-``h`` autocovariances of a centred series ``X_0, ..., X_{T-1}`` are

    R_h = (1 / (T - h)) sum_t X_{t+h} X_t*          (h >= 0)

with ``R_{-h} = R_h*``.  The lag-window spectral density estimate on a
frequency grid is the symmetrised two-sided sum

    F(w) = (1/2pi) sum_{|h| <= L} win(h) exp(-i w h) R_h

which is Hermitian by construction and PSD-projected per frequency
(projection can be disabled to verify the Fourier inversion, which
recovers ``win(h) R_h`` exactly on a fine enough grid).  Real series are
stored on [0, pi] only; their spectra satisfy ``F(-w) = conj(F(w))``.
The stored grid is mapped affinely onto [0, 1] so a spectral flow is a
valid :class:`~bwflow.flow.Flow` with complex entries.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .exceptions import (
    EmptyFreqGridError,
    GridTooCoarseError,
    LagTooLargeError,
    RaggedSeriesError,
    ValidationError,
)
from .flow import Flow, trapezoid_weights

_WINDOWS = ("bartlett", "rect")


@dataclass(frozen=True)
class SeriesPanel:
    """One multivariate series: ``values[t]`` is the observation at time t."""

    values: np.ndarray
    series_id: int = 0
    centered: bool = False

    def __post_init__(self):
        try:
            values = np.asarray(self.values, dtype=complex if np.iscomplexobj(self.values) else float)
        except (ValueError, TypeError) as err:
            raise RaggedSeriesError(f"series rows are ragged: {err}") from None
        if values.dtype == object or values.ndim != 2:
            raise RaggedSeriesError(
                f"series must be a (T, d) array of equal-length rows, got shape {values.shape}"
            )
        linalg.check_finite(values)
        object.__setattr__(self, "values", values)

    @property
    def n_times(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def center(panel):
    """Subtract the column means."""
    return SeriesPanel(panel.values - panel.values.mean(axis=0), panel.series_id, True)


def difference(panel):
    """First difference; shortens the series by one."""
    if panel.n_times < 2:
        raise ValidationError("differencing needs at least two observations")
    return SeriesPanel(np.diff(panel.values, axis=0), panel.series_id, False)


def moving_average(panel, window):
    """Centred moving average with windows truncated at the boundaries."""
    window = int(window)
    if window < 1:
        raise ValidationError("window must be at least 1")
    if window > panel.n_times:
        raise ValidationError("window exceeds the series length")
    half = (window - 1) // 2
    t = panel.n_times
    csum = np.vstack([np.zeros((1, panel.dim)), np.cumsum(panel.values, axis=0)])
    lo = np.maximum(np.arange(t) - half, 0)
    hi = np.minimum(np.arange(t) + (window - half - 1), t - 1)
    out = (csum[hi + 1] - csum[lo]) / (hi - lo + 1)[:, None]
    return SeriesPanel(out, panel.series_id, panel.centered)


def autocov(panel, lag):
    """Lag-``lag`` autocovariance; negative lags return the adjoint."""
    h = int(lag)
    t = panel.n_times
    if abs(h) >= t:
        raise LagTooLargeError(f"lag {h} needs a series longer than {abs(h)}")
    x = panel.values if panel.centered else panel.values - panel.values.mean(axis=0)
    if h < 0:
        r = autocov(SeriesPanel(x, panel.series_id, True), -h)
        return r.conj().T
    r = np.einsum("ta,tb->ab", x[h:], np.conjugate(x[: t - h])) / (t - h)
    return r


def lag_window(kind, lags, max_lag):
    """Taper weights ``win(h)`` for ``|h| <= max_lag``."""
    if kind not in _WINDOWS:
        raise ValidationError(f"window must be one of {_WINDOWS}, got {kind!r}")
    lags = np.abs(np.asarray(lags))
    if kind == "rect":
        return np.where(lags <= max_lag, 1.0, 0.0)
    return np.maximum(1.0 - lags / (max_lag + 1.0), 0.0)


@dataclass(frozen=True)
class SpectralFlow(Flow):
    """Spectral density flow: complex matrices over a mapped frequency grid.

    ``freqs`` holds the angular frequencies; ``grid`` is their affine
    image in [0, 1] (over [0, pi] for real sources, [-pi, pi] for
    complex ones).
    """

    freqs: np.ndarray = None
    max_lag: int = 0
    window: str = "bartlett"
    source_kind: str = "real"

    def __post_init__(self):
        super().__post_init__()
        freqs = np.asarray(self.freqs, dtype=float)
        if freqs.shape != self.grid.shape:
            raise ValidationError("freqs must align with the grid")
        object.__setattr__(self, "freqs", freqs)


def _freq_grid(n_freqs, source_kind):
    if source_kind == "real":
        return np.linspace(0.0, np.pi, n_freqs)
    return np.linspace(-np.pi, np.pi, n_freqs)


def _map_to_unit(freqs, source_kind):
    if source_kind == "real":
        return freqs / np.pi
    return (freqs + np.pi) / (2.0 * np.pi)


def spectral_density_flow(panel, max_lag, n_freqs=None, freqs=None,
                          window="bartlett", project=True):
    """Lag-window spectral density estimate of one series.

    Parameters
    ----------
    panel : SeriesPanel
    max_lag : int
        Truncation point ``L``; must be smaller than the series length.
    n_freqs : int, optional
        Size of the uniform frequency grid; defaults to ``2 L + 1`` for
        real input and ``4 L + 1`` for complex input, the alias-free
        bounds of :func:`invert_sdf` (a complex spectrum spans the full
        circle, so it needs more than ``2 L`` intervals on its own).
    freqs : ndarray, optional
        Explicit angular frequencies (within [0, pi] for real input,
        [-pi, pi] for complex input); overrides ``n_freqs``.
    window : {"bartlett", "rect"}
    project : bool
        Apply the PSD projection per frequency.  Disable to verify the
        Fourier roundtrip against the raw Hermitian estimate.

    Returns
    -------
    SpectralFlow
    """
    max_lag = int(max_lag)
    if max_lag < 0:
        raise ValidationError("max_lag must be nonnegative")
    if max_lag >= panel.n_times:
        raise LagTooLargeError(
            f"max_lag {max_lag} needs a series longer than {max_lag}"
        )
    src = "complex" if np.iscomplexobj(panel.values) else "real"
    if freqs is None:
        if n_freqs is None:
            n_freqs = (2 if src == "real" else 4) * max_lag + 1
        if n_freqs < 1:
            raise EmptyFreqGridError("frequency grid is empty")
        freqs = _freq_grid(n_freqs, src)
    else:
        freqs = np.asarray(freqs, dtype=float)
        if freqs.size == 0:
            raise EmptyFreqGridError("frequency grid is empty")
        lo = 0.0 if src == "real" else -np.pi
        if freqs.min() < lo - 1e-12 or freqs.max() > np.pi + 1e-12:
            raise ValidationError("frequencies outside the admissible band")

    centred = panel if panel.centered else center(panel)
    d = panel.dim
    covs = np.stack([autocov(centred, h) for h in range(max_lag + 1)])
    taper = lag_window(window, np.arange(max_lag + 1), max_lag)
    mats = np.empty((freqs.size, d, d), dtype=complex)
    hs = np.arange(1, max_lag + 1)
    for k, w in enumerate(freqs):
        acc = taper[0] * covs[0].astype(complex)
        if max_lag:
            phases = np.exp(-1j * w * hs) * taper[1:]
            acc = acc + np.einsum("h,hab->ab", phases, covs[1:])
            acc = acc + np.einsum("h,hab->ab", np.conjugate(phases), covs[1:].conj().transpose(0, 2, 1))
        acc /= 2.0 * np.pi
        mats[k] = 0.5 * (acc + acc.conj().T)
    if project:
        mats = linalg.project_psd(mats, check=False)
    return SpectralFlow(
        grid=_map_to_unit(freqs, src), mats=mats, freqs=freqs,
        max_lag=max_lag, window=window, source_kind=src,
    )


def invert_sdf(sdf, lag):
    """Fourier inversion ``int exp(i w h) F(w) dw`` over the stored grid.

    For a real-source spectrum on [0, pi] the negative band is supplied
    by conjugate symmetry before integrating.  On the default uniform
    grid this recovers ``win(h) R_h`` exactly up to round-off; grids
    below ``2 max_lag + 1`` points (real source) or ``4 max_lag + 1``
    points (complex source, which spans the full circle on its own)
    alias and raise :class:`GridTooCoarseError`.
    """
    h = int(lag)
    need = (2 if sdf.source_kind == "real" else 4) * sdf.max_lag + 1
    if sdf.freqs.size < need:
        raise GridTooCoarseError(
            f"{sdf.freqs.size} frequencies cannot resolve lags up to {sdf.max_lag}"
        )
    if sdf.source_kind == "real":
        freqs = np.concatenate([-sdf.freqs[1:][::-1], sdf.freqs])
        vals = np.concatenate(
            [np.conjugate(sdf.mats[1:][::-1]), sdf.mats], axis=0
        )
    else:
        freqs, vals = sdf.freqs, sdf.mats
    if freqs.size < 2:
        raise GridTooCoarseError("need at least two frequencies to integrate")
    w = np.empty(freqs.size)
    w[0] = (freqs[1] - freqs[0]) / 2.0
    w[-1] = (freqs[-1] - freqs[-2]) / 2.0
    w[1:-1] = (freqs[2:] - freqs[:-2]) / 2.0
    phases = np.exp(1j * freqs * h) * w
    return np.einsum("k,kab->ab", phases, vals)
