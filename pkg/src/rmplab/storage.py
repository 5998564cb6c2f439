"""Artifact persistence with byte-stable output.

Formats
-------
Ensemble CSV: RFC 4180, LF line endings, header row, one row per path:
    path_index,flagged,<t0>,<t1>,...
Floats are written with repr (shortest round-trip form), so identical
arrays always serialize to identical bytes.

Ensemble binary: 64-byte little-endian header followed by the value
matrix and the flag vector:
    offset  size  field
    0       8     magic "RMPLENS\\0"
    8       4     format version (uint32, currently 1)
    12      8     process label, ASCII, NUL padded
    20      8     n_paths  (uint64)
    28      8     n_steps  (uint64)
    36      8     dt       (float64)
    44      8     master_seed (uint64)
    52      12    reserved (zero)
    64      8*n_paths*(n_steps+1)   values, float64, row-major
    ...     n_paths                 flag bytes (0 or 1)

JSON summaries: UTF-8, sorted keys, two-space indent, no timestamps.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .engine import PathEnsemble
from .errors import IOFailureError
from .grid import TimeGrid

MAGIC = b"RMPLENS\x00"
BINARY_VERSION = 1
_HEADER = struct.Struct("<8sI8sQQdQ12x")
assert _HEADER.size == 64


def _fmt(x: float) -> str:
    return repr(float(x))


def write_ensemble_csv(path: "str | Path", ensemble: PathEnsemble) -> None:
    times = ensemble.grid.times
    lines = ["path_index,flagged," + ",".join(_fmt(t) for t in times)]
    for i in range(ensemble.n_paths):
        row = ensemble.values[i]
        lines.append(
            f"{i},{int(ensemble.flagged[i])}," + ",".join(_fmt(v) for v in row)
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_ensemble_csv(path: "str | Path", label: str, master_seed: int = 0) -> PathEnsemble:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IOFailureError(str(exc)) from exc
    lines = [ln for ln in text.split("\n") if ln]
    header = lines[0].split(",")
    times = np.array([float(v) for v in header[2:]])
    if times.size < 2:
        raise IOFailureError("ensemble CSV must contain at least two nodes")
    dt = float(times[1] - times[0])
    rows = [ln.split(",") for ln in lines[1:]]
    values = np.array([[float(v) for v in r[2:]] for r in rows])
    flagged = np.array([bool(int(r[1])) for r in rows])
    grid = TimeGrid(dt=dt, n_steps=times.size - 1)
    return PathEnsemble(
        grid=grid, label=label, values=values, flagged=flagged, master_seed=master_seed
    )


def write_ensemble_binary(path: "str | Path", ensemble: PathEnsemble) -> None:
    label = ensemble.label.encode("ascii")[:8]
    header = _HEADER.pack(
        MAGIC,
        BINARY_VERSION,
        label.ljust(8, b"\x00"),
        ensemble.n_paths,
        ensemble.grid.n_steps,
        ensemble.grid.dt,
        ensemble.master_seed,
    )
    body = np.ascontiguousarray(ensemble.values, dtype="<f8").tobytes()
    flags = np.ascontiguousarray(ensemble.flagged, dtype=np.uint8).tobytes()
    Path(path).write_bytes(header + body + flags)


def read_ensemble_binary(path: "str | Path") -> PathEnsemble:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailureError(str(exc)) from exc
    if len(blob) < _HEADER.size:
        raise IOFailureError("truncated ensemble file: missing header")
    magic, version, label, n_paths, n_steps, dt, master_seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise IOFailureError("not an ensemble file: bad magic")
    if version != BINARY_VERSION:
        raise IOFailureError(f"unsupported ensemble format version {version}")
    n_nodes = n_steps + 1
    expected = _HEADER.size + 8 * n_paths * n_nodes + n_paths
    if len(blob) != expected:
        raise IOFailureError(
            f"truncated ensemble file: expected {expected} bytes, got {len(blob)}"
        )
    values = np.frombuffer(
        blob, dtype="<f8", count=n_paths * n_nodes, offset=_HEADER.size
    ).reshape(n_paths, n_nodes)
    flags = np.frombuffer(
        blob, dtype=np.uint8, count=n_paths, offset=_HEADER.size + 8 * n_paths * n_nodes
    ).astype(bool)
    grid = TimeGrid(dt=dt, n_steps=n_steps)
    return PathEnsemble(
        grid=grid,
        label=label.rstrip(b"\x00").decode("ascii"),
        values=values.copy(),
        flagged=flags,
        master_seed=master_seed,
    )


def to_jsonable(obj: object) -> object:
    """Recursively convert numpy containers/scalars to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_json(path: "str | Path", payload: object) -> None:
    text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_moment_csv(
    path: "str | Path",
    rows: Iterable[tuple[float, float, float, float, int, int]],
) -> None:
    """Moment curve table with columns t, p, value, std_err, n, excluded."""
    lines = ["t,p,value,std_err,n,excluded"]
    for t, p, value, std_err, n, excluded in rows:
        lines.append(
            f"{_fmt(t)},{_fmt(p)},{_fmt(value)},{_fmt(std_err)},{int(n)},{int(excluded)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_convergence_csv(
    path: "str | Path",
    rows: Iterable[tuple[float, float, float, float, float, float]],
) -> None:
    lines = ["t,E_f_Xt,std_err,delta,fitted_rate,predicted_rate"]
    for t, v, se, delta, fitted, predicted in rows:
        lines.append(
            ",".join(_fmt(x) for x in (t, v, se, delta, fitted, predicted))
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_plotdata(
    path: "str | Path", columns: "dict[str, np.ndarray]", stub_path: "str | Path | None" = None
) -> None:
    """Whitespace-separated data file plus an optional matplotlib stub."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=np.float64) for n in names]
    n_rows = len(arrays[0])
    lines = ["# " + " ".join(names)]
    for i in range(n_rows):
        lines.append(" ".join(_fmt(a[i]) for a in arrays))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    if stub_path is not None:
        data_name = Path(path).name
        stub = (
            "import matplotlib.pyplot as plt\n"
            "import numpy as np\n\n"
            f"data = np.loadtxt({data_name!r})\n"
            f"names = {names!r}\n"
            "for j in range(1, data.shape[1]):\n"
            "    plt.plot(data[:, 0], data[:, j], label=names[j])\n"
            "plt.xlabel(names[0])\n"
            "plt.legend()\n"
            "plt.tight_layout()\n"
            f"plt.savefig({(Path(path).stem + '.png')!r}, dpi=150)\n"
        )
        Path(stub_path).write_text(stub, encoding="utf-8", newline="\n")


def sha256_file(path: "str | Path") -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def build_manifest(
    out_dir: "str | Path",
    artifact_names: "list[str]",
    *,
    config_hash: str,
    wall_clock_s: float,
    subcommand: str,
    version: str,
    flagged: "dict[str, int] | None" = None,
    verdicts: "dict[str, str] | None" = None,
) -> dict:
    out = Path(out_dir)
    artifacts = [
        {
            "path": name,
            "sha256": sha256_file(out / name),
            "bytes": (out / name).stat().st_size,
        }
        for name in sorted(artifact_names)
    ]
    return {
        "config_sha256": config_hash,
        "subcommand": subcommand,
        "artifacts": artifacts,
        "flagged_paths": flagged or {},
        "verdicts": verdicts or {},
        "wall_clock_s": wall_clock_s,
        "version": version,
    }
