"""Serialization: the BWF1 flow container, CSV helpers and run manifests.

BWF1 layout (all integers little-endian):

========  ======================================================
bytes     content
========  ======================================================
0:8       magic ``b"BWFLOW1\\x00"``
8         scalar kind: 0 for float64, 1 for complex128
9:12      reserved, must be zero
12:24     ``n_flows``, ``n_times``, ``dim`` as uint32
24:...    time grid, ``n_times`` float64
...       payload, row-major (flow, time, row, column); complex
          entries are interleaved (real, imaginary) float64 pairs
========  ======================================================

Writing then reading a file reproduces the array bit for bit.  The
high-level reader returns a validated :class:`FlowSet`; the raw reader
skips interpretation so the container can also carry tangent fields or
principal components, which are not Hermitian PSD.
"""

import hashlib
import json
import platform
import struct
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import FormatError, NonHermitianError, NotPsdError
from .flow import Flow, FlowSet, _check_grid
from .linalg import HERM_TOL, PSD_TOL, ct, project_psd
from .smoothing import ScatterObs

MAGIC = b"BWFLOW1\x00"
_HEADER = struct.Struct("<III")


def write_bwf1(path, grid, mats):
    """Write a (n, m, d, d) real or complex stack with its time grid."""
    grid = np.asarray(grid, dtype=float)
    mats = np.asarray(mats)
    if mats.ndim == 3:
        mats = mats[None]
    if mats.ndim != 4 or mats.shape[-1] != mats.shape[-2]:
        raise FormatError(f"expected a (n, m, d, d) stack, got shape {mats.shape}")
    n, m, d = mats.shape[0], mats.shape[1], mats.shape[2]
    if grid.shape != (m,):
        raise FormatError(f"grid length {grid.shape} does not match {m} time points")
    complex_kind = np.iscomplexobj(mats)
    payload = np.ascontiguousarray(
        mats, dtype="<c16" if complex_kind else "<f8"
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([1 if complex_kind else 0, 0, 0, 0]))
        fh.write(_HEADER.pack(n, m, d))
        fh.write(grid.astype("<f8").tobytes())
        fh.write(payload.tobytes())


def write_flows(path, flows):
    """Write a Flow or FlowSet to a BWF1 file."""
    if isinstance(flows, Flow):
        write_bwf1(path, flows.grid, flows.mats[None])
    else:
        write_bwf1(path, flows.grid, flows.mats)


def read_bwf1_raw(path):
    """Read the grid and stack without content checks beyond the format.

    Returns
    -------
    grid : ndarray, shape (m,)
    mats : ndarray, shape (n, m, d, d), float64 or complex128
    """
    buf = Path(path).read_bytes()
    if len(buf) < 24:
        raise FormatError("file too short for a BWF1 header")
    if buf[:8] != MAGIC:
        raise FormatError("bad magic; not a BWF1 file")
    kind = buf[8]
    if kind not in (0, 1):
        raise FormatError(f"unknown scalar kind {kind}")
    if buf[9:12] != b"\x00\x00\x00":
        raise FormatError("reserved header bytes must be zero")
    n, m, d = _HEADER.unpack(buf[12:24])
    if min(n, m, d) < 1:
        raise FormatError(f"invalid sizes n={n}, m={m}, d={d}")
    itemsize = 16 if kind else 8
    expected = 24 + 8 * m + itemsize * n * m * d * d
    if len(buf) != expected:
        raise FormatError(
            f"payload size mismatch: file has {len(buf)} bytes, header implies {expected}"
        )
    grid = np.frombuffer(buf, dtype="<f8", count=m, offset=24).copy()
    _check_grid(grid)
    mats = np.frombuffer(
        buf, dtype="<c16" if kind else "<f8", count=n * m * d * d, offset=24 + 8 * m
    )
    return grid, mats.reshape(n, m, d, d).copy()


def _psd_violations(mats, psd_tol):
    herm = 0.5 * (mats + ct(mats))
    scale = np.abs(mats).max(axis=(-2, -1))
    resid = np.abs(mats - herm).max(axis=(-2, -1))
    bad_h = np.argwhere(resid > HERM_TOL * np.maximum(scale, 1.0))
    w = np.linalg.eigvalsh(herm)
    bad_p = np.argwhere(w[..., 0] < -psd_tol * np.maximum(w[..., -1], 1e-300))
    return (
        [tuple(int(v) for v in ij) for ij in bad_h],
        [tuple(int(v) for v in ij) for ij in bad_p],
    )


def read_bwf1(path, validate=True, force_project=False, psd_tol=PSD_TOL):
    """Read a BWF1 file of covariance flows as a FlowSet.

    With ``validate`` each matrix is checked to be Hermitian PSD and the
    error names the offending (flow, time) indices.  ``force_project``
    instead replaces every matrix by its nearest PSD matrix.
    """
    grid, mats = read_bwf1_raw(path)
    if force_project:
        mats = project_psd(0.5 * (mats + ct(mats)))
    elif validate:
        bad_h, bad_p = _psd_violations(mats, psd_tol)
        if bad_h:
            raise NonHermitianError(
                f"non-Hermitian matrices at (flow, time) indices {bad_h[:5]}"
            )
        if bad_p:
            raise NotPsdError(
                f"matrices not PSD at (flow, time) indices {bad_p[:5]}"
            )
    return FlowSet(grid, mats)


def file_sha256(path):
    """Hex SHA-256 digest of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _package_versions():
    import scipy
    import sklearn

    try:
        from importlib.metadata import version

        own = version("bwflow")
    except Exception:
        own = "unknown"
    return {
        "bwflow": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pandas": pd.__version__,
        "python": platform.python_version(),
    }


class RunManifest:
    """Reproducibility record written next to every command output.

    Captures the command, its resolved arguments, the seed, content
    hashes of all inputs and outputs, library versions and wall time.
    Identical inputs, arguments and seed must therefore yield identical
    output hashes.
    """

    def __init__(self, command, arguments=None, seed=None):
        self.command = command
        self.arguments = dict(arguments or {})
        self.seed = seed
        self.input_hashes = {}
        self.output_hashes = {}
        self.versions = _package_versions()
        self._t0 = time.monotonic()

    def add_input(self, path):
        self.input_hashes[str(path)] = file_sha256(path)

    def add_output(self, path):
        self.output_hashes[str(path)] = file_sha256(path)

    def to_dict(self):
        return {
            "command": self.command,
            "arguments": self.arguments,
            "seed": self.seed,
            "inputs": self.input_hashes,
            "outputs": self.output_hashes,
            "versions": self.versions,
            "wall_time_s": round(time.monotonic() - self._t0, 6),
        }

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            return json.load(fh)


def manifest_path(output_path):
    """Conventional manifest location for a given output file."""
    p = Path(output_path)
    return p.with_name(p.name + ".manifest.json")


def write_scores_csv(path, scores, labels=None):
    """Score matrix as CSV with one row per flow."""
    scores = np.asarray(scores)
    cols = {"flow": np.arange(scores.shape[0])}
    for k in range(scores.shape[1]):
        cols[f"score_{k + 1}"] = scores[:, k]
    if labels is not None:
        cols["label"] = np.asarray(labels)
    pd.DataFrame(cols).to_csv(path, index=False)


def read_scores_csv(path):
    """Score matrix back from CSV; returns (scores, labels-or-None)."""
    df = pd.read_csv(path)
    score_cols = [c for c in df.columns if c.startswith("score_")]
    score_cols.sort(key=lambda c: int(c.split("_")[1]))
    labels = df["label"].to_numpy() if "label" in df.columns else None
    return df[score_cols].to_numpy(dtype=float), labels


def write_labels_csv(path, labels):
    pd.DataFrame({"flow": np.arange(len(labels)), "label": labels}).to_csv(
        path, index=False
    )


def write_eigenvalues_csv(path, eigenvalues, total_variance):
    ev = np.asarray(eigenvalues, dtype=float)
    frac = ev / total_variance if total_variance > 0 else np.zeros_like(ev)
    pd.DataFrame(
        {
            "component": np.arange(1, ev.size + 1),
            "eigenvalue": ev,
            "variance_fraction": frac,
        }
    ).to_csv(path, index=False)


def write_trace_csv(path, traces):
    """Solver traces (one block per grid point) as a long CSV."""
    rows = []
    for j, trace in enumerate(traces):
        kind = "gd" if hasattr(trace, "functional") else "sgd"
        for row in trace.rows():
            rows.append((j, kind) + row)
    pd.DataFrame(
        rows, columns=["grid_index", "algo", "iteration", "value", "residual"]
    ).to_csv(path, index=False)


def write_obs_csv(path, obs):
    """Scattered observations as CSV: flow_id, time, then d*d entries.

    Complex inputs store real and imaginary parts in separate columns.
    """
    d = obs.dim
    flat = obs.mats.reshape(obs.n_obs, d * d)
    cols = {"flow_id": obs.flow_ids, "time": obs.times}
    names = [f"m_{a + 1}_{b + 1}" for a in range(d) for b in range(d)]
    if np.iscomplexobj(flat):
        for k, name in enumerate(names):
            cols[name + "_re"] = flat[:, k].real
            cols[name + "_im"] = flat[:, k].imag
    else:
        for k, name in enumerate(names):
            cols[name] = flat[:, k]
    pd.DataFrame(cols).to_csv(path, index=False)


def read_obs_csv(path):
    """Scattered observations from CSV written by :func:`write_obs_csv`."""
    df = pd.read_csv(path)
    for col in ("flow_id", "time"):
        if col not in df.columns:
            raise FormatError(f"observations CSV must have a {col!r} column")
    value_cols = [c for c in df.columns if c.startswith("m_")]
    complex_kind = any(c.endswith("_re") for c in value_cols)
    if complex_kind:
        base = [c[:-3] for c in value_cols if c.endswith("_re")]
        flat = (
            df[[b + "_re" for b in base]].to_numpy(dtype=float)
            + 1j * df[[b + "_im" for b in base]].to_numpy(dtype=float)
        )
    else:
        flat = df[value_cols].to_numpy(dtype=float)
    d = int(round(np.sqrt(flat.shape[1])))
    if d * d != flat.shape[1]:
        raise FormatError(
            f"{flat.shape[1]} value columns do not form square matrices"
        )
    mats = flat.reshape(-1, d, d)
    return ScatterObs(
        times=df["time"].to_numpy(dtype=float),
        mats=mats,
        flow_ids=df["flow_id"].to_numpy(dtype=int),
    )


def read_series_csv(path):
    """A vector time series from CSV.

    Rows are sorted by a ``time_index`` column when present; every other
    numeric column is a coordinate, in column order.
    """
    df = pd.read_csv(path)
    if "time_index" in df.columns:
        df = df.sort_values("time_index", kind="stable")
        df = df.drop(columns=["time_index"])
    values = df.to_numpy(dtype=float)
    if values.ndim != 2 or values.shape[1] < 1:
        raise FormatError("series CSV must have at least one coordinate column")
    return values


def save_pca_model(model, prefix):
    """Persist a fitted PCA model under a directory.

    Writes ``model.json`` plus BWF1 files for the mean flow and the
    component stack (tangent content, stored raw) and a scores CSV.
    """
    prefix = Path(prefix)
    prefix.mkdir(parents=True, exist_ok=True)
    write_flows(prefix / "mean.bwf1", model.mean_flow)
    if model.n_components:
        comps = np.stack([c.mats for c in model.components])
        write_bwf1(prefix / "components.bwf1", model.mean_flow.grid, comps)
    write_scores_csv(prefix / "scores.csv", model.scores)
    meta = {
        "format": "bwflow-pca",
        "n_components": int(model.n_components),
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "total_variance": float(model.total_variance),
        "rank_tol": float(model.rank_tol),
        "files": {
            "mean": "mean.bwf1",
            "components": "components.bwf1" if model.n_components else None,
            "scores": "scores.csv",
        },
        "content": {"mean": "covariance", "components": "tangent"},
    }
    with open(prefix / "model.json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_pca_model(prefix):
    """Load a PCA model saved by :func:`save_pca_model`."""
    from .pca import PcaModel, TangentField

    prefix = Path(prefix)
    with open(prefix / "model.json") as fh:
        meta = json.load(fh)
    if meta.get("format") != "bwflow-pca":
        raise FormatError("not a saved PCA model directory")
    mean = read_bwf1(prefix / meta["files"]["mean"])[0]
    components = []
    if meta["n_components"]:
        grid, comps = read_bwf1_raw(prefix / meta["files"]["components"])
        if not np.array_equal(grid, mean.grid):
            raise FormatError("component grid differs from the mean grid")
        components = [TangentField(mean.grid, comps[k]) for k in range(comps.shape[0])]
    scores, _ = read_scores_csv(prefix / meta["files"]["scores"])
    return PcaModel(
        mean_flow=mean,
        eigenvalues=np.asarray(meta["eigenvalues"], dtype=float),
        components=components,
        scores=scores,
        total_variance=meta["total_variance"],
        rank_tol=meta["rank_tol"],
    )
