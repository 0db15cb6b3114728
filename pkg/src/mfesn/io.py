"""File formats: trajectories, ESN models, experiment tables.

Trajectory CSV
    Comment lines (``# key=value``) then a ``t,a1,...,a9`` header; numbers
    written with 17 significant digits so doubles round-trip exactly.
Trajectory binary
    ``MFETRJ01``, a header ``<d re, d dt_sample, d t0, Q count, Q seed>``,
    then ``count x 9`` little-endian doubles, row-major.
Model file
    ``ESNMDL01``, a little-endian ``uint32`` byte length and that many bytes
    of ``key=value`` lines (UTF-8), then little-endian arrays: the sparse
    recurrent matrix as ``uint32`` rows, ``uint32`` columns and ``float64``
    values (nnz each, row-major order), ``W_in`` (n x m), the bias (n) and,
    when trained, ``W_out`` (m x (n + 1)).
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import __version__
from .esn import EsnHyperparameters, EsnModel, _freeze
from .mfe import N_MODES, Trajectory

MODEL_MAGIC = b"ESNMDL01"
TRAJ_MAGIC = b"MFETRJ01"
_TRAJ_HEADER = struct.Struct("<dddQQ")
MODEL_FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _comment_block(meta: Optional[Mapping[str, object]]) -> str:
    if not meta:
        return ""
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


# -- trajectories ----------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, meta: Optional[Mapping[str, object]] = None) -> str:
    lines = [_comment_block(meta), "t," + ",".join(f"a{j + 1}" for j in range(N_MODES)) + "\n"]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join([format(t, ".17g")] + [format(v, ".17g") for v in row]) + "\n")
    return "".join(lines)


def write_trajectory_csv(path, traj: Trajectory, meta: Optional[Mapping[str, object]] = None) -> None:
    Path(path).write_text(trajectory_to_csv(traj, meta))


def read_comments(path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    if header != ["t"] + [f"a{j + 1}" for j in range(N_MODES)]:
        raise FormatError(f"unexpected trajectory header {header}")
    data = np.loadtxt(io.StringIO("".join(lines[1:])), delimiter=",", ndmin=2)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    if len(t) > 2 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise FormatError("trajectory is not uniformly sampled")
    return Trajectory(data[:, 1:], dt, float(t[0]))


def write_trajectory_binary(path, traj: Trajectory, re: float = 0.0, seed: int = 0) -> None:
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(_TRAJ_HEADER.pack(re, traj.dt_sample, traj.t0, len(traj), seed))
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())


def read_trajectory_binary(path) -> tuple[Trajectory, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != TRAJ_MAGIC:
        raise FormatError("not a binary trajectory file")
    re, dt, t0, count, seed = _TRAJ_HEADER.unpack_from(raw, 8)
    body = raw[8 + _TRAJ_HEADER.size:]
    if len(body) != count * N_MODES * 8:
        raise FormatError("truncated trajectory file")
    states = np.frombuffer(body, dtype="<f8").reshape(count, N_MODES).astype(np.float64)
    return Trajectory(states, dt, t0), {"re": re, "seed": seed}


def read_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == TRAJ_MAGIC:
        return read_trajectory_binary(path)[0]
    return read_trajectory_csv(path)


# -- models ---------------------------------------------------------------------

def _hp_meta(hp: EsnHyperparameters) -> dict[str, str]:
    out = {}
    for f in fields(hp):
        v = getattr(hp, f.name)
        out[f.name] = repr(float(v)) if isinstance(v, float) else str(v)
    return out


def model_to_bytes(model: EsnModel) -> bytes:
    w = sp.csr_matrix(model.w)
    w.sort_indices()
    coo = w.tocoo()
    n, m = model.w_in.shape
    meta = {"format_version": str(MODEL_FORMAT_VERSION), "created_by": f"mfesn {__version__}"}
    meta.update(_hp_meta(model.hp))
    meta.update({"rows": str(n), "inputs": str(m), "nnz": str(coo.nnz),
                 "trained": "1" if model.trained else "0"})
    text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<I", len(text)), text,
             coo.row.astype("<u4").tobytes(), coo.col.astype("<u4").tobytes(),
             coo.data.astype("<f8").tobytes(),
             np.ascontiguousarray(model.w_in, dtype="<f8").tobytes(),
             np.ascontiguousarray(model.bias, dtype="<f8").tobytes()]
    if model.trained:
        parts.append(np.ascontiguousarray(model.w_out, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(raw: bytes) -> EsnModel:
    if raw[:8] != MODEL_MAGIC:
        raise FormatError("not an ESN model file")
    (size,) = struct.unpack_from("<I", raw, 8)
    pos = 12 + size
    meta = dict(line.split("=", 1) for line in raw[12:pos].decode("utf-8").splitlines() if line)
    if int(meta.get("format_version", -1)) != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {meta.get('format_version')}")
    kwargs = {}
    for f in fields(EsnHyperparameters):
        kwargs[f.name] = float(meta[f.name]) if f.type in ("float", float) else int(meta[f.name])
    hp = EsnHyperparameters(**kwargs)
    n, m, nnz = int(meta["rows"]), int(meta["inputs"]), int(meta["nnz"])

    def take(dtype, count):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        if pos + size > len(raw):
            raise FormatError("truncated model file")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += size
        return arr

    rows, cols, vals = take("<u4", nnz), take("<u4", nnz), take("<f8", nnz)
    w = sp.csr_matrix((vals.astype(np.float64), (rows.astype(np.int64), cols.astype(np.int64))), shape=(n, n))
    w.sort_indices()
    w_in = take("<f8", n * m).reshape(n, m).astype(np.float64)
    bias = take("<f8", n).astype(np.float64)
    w_out = take("<f8", m * (n + 1)).reshape(m, n + 1).astype(np.float64) if meta["trained"] == "1" else None
    if pos != len(raw):
        raise FormatError("trailing bytes in model file")
    return _freeze(EsnModel(hp, w, w_in, bias, w_out))


def save_model(path, model: EsnModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> EsnModel:
    return model_from_bytes(Path(path).read_bytes())


# -- tables and manifests ---------------------------------------------------------

def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Optional[Mapping[str, object]] = None) -> None:
    """CSV with a ``# key=value`` comment header; floats at 17 significant digits."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format(float(v), ".17g")
        return str(v)

    body = [",".join(columns) + "\n"] + [",".join(cell(v) for v in row) + "\n" for row in rows]
    Path(path).write_text(_comment_block(meta) + "".join(body))


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class DatasetManifest:
    path: str
    re: float
    dt_sample: float
    count: int
    seed: int
    checksum: str

    @classmethod
    def for_file(cls, path, traj: Trajectory, re: float, seed: int) -> DatasetManifest:
        return cls(os.path.basename(path), re, traj.dt_sample, len(traj), seed, sha256(path))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> DatasetManifest:
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, directory) -> bool:
        return sha256(Path(directory) / self.path) == self.checksum
