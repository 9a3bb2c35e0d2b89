"""CSV ingestion/emission and the binary model file.

Model file layout (all integers unsigned 32-bit or signed 64-bit, all
numbers little-endian):

    offset  content
    0       magic b"SHRINKTM"
    8       u32 format version (1)
    12      u32 N, n, m, m', dim, m_max
    36      u32 length L of the metadata block
    40      L bytes UTF-8 JSON: {"hyperparams": {...}, "ids": [...], "method": ...}
            (keys sorted, floats written with full round-trip precision)
    ...     f64 coords[N, dim]        locations in original file order
            i64 perm[N]               maximin order -> original index
            f64 scales[N]
            i64 neighbors[N, m_max]   -1 marks unused slots
            f64 y[n, N]               training fields, maximin order
            f64 weights[N, m']        squared relevance weights
            then N component blocks, each:
            f64 alpha_t, beta_t, tau2, sigma2
            f64 xi[m]
            f64 chol[n (n + 1) / 2]   lower Cholesky factor of G_i, row-major packed
            f64 u[n]                  G_i^{-1} (y_i - Y_g xi_i)

Writing a loaded model reproduces the original bytes exactly.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Ordering
from .mapkernel import HyperParams
from .posterior import FittedMap

MAGIC = b"SHRINKTM"
VERSION = 1
_HEADER = struct.Struct("<8sI6II")


class DataError(ValueError):
    """Malformed or mismatched input files."""


# -- CSV ----------------------------------------------------------------------
def read_locations(path) -> tuple[list[str], np.ndarray]:
    """Read ``id,x[,y[,z]]`` rows; returns ids and an (N, dim) coordinate array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty locations file")
    header = [h.strip() for h in rows[0]]
    if header[0] != "id" or header[1:] not in (["x"], ["x", "y"], ["x", "y", "z"]):
        raise DataError(f"{path}: header must be id,x[,y[,z]], got {','.join(header)}")
    ids, pts = [], []
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{k}: expected {len(header)} fields")
        ids.append(row[0].strip())
        try:
            pts.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{k}: {exc}") from None
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: location ids are not unique")
    if not ids:
        raise DataError(f"{path}: no locations")
    return ids, np.array(pts, dtype=float)


def write_locations(path, ids: Sequence[str], coords: np.ndarray) -> None:
    coords = np.asarray(coords, float)
    names = ["x", "y", "z"][:coords.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *names])
        for i, p in zip(ids, coords):
            w.writerow([i, *map(repr, p.tolist())])


def read_data(path, ids: Optional[Sequence[str]] = None) -> tuple[list[str], np.ndarray]:
    """Read a replicate-per-row CSV whose header lists location ids.

    With ``ids`` given, columns are returned in that order (so files may
    list locations in any order).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty data file")
    header = [h.strip() for h in rows[0]]
    try:
        y = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(header))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(y)):
        raise DataError(f"{path}: non-finite values")
    if ids is None:
        return header, y
    pos = {h: k for k, h in enumerate(header)}
    missing = [i for i in ids if i not in pos]
    if missing or len(header) != len(ids):
        raise DataError(f"{path}: columns do not match the location ids (missing {missing[:5]})")
    return list(ids), y[:, [pos[i] for i in ids]]


def write_data(path, ids: Sequence[str], y: np.ndarray) -> None:
    y = np.atleast_2d(np.asarray(y, float)).reshape(-1, len(ids))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ids))
        for row in y:
            w.writerow([repr(v) for v in row.tolist()])


# -- model file ---------------------------------------------------------------
def _packed_lower(chol: np.ndarray) -> np.ndarray:
    n = chol.shape[-1]
    r, c = np.tril_indices(n)
    return chol[:, r, c]


def _unpack_lower(packed: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((packed.shape[0], n, n))
    r, c = np.tril_indices(n)
    out[:, r, c] = packed
    return out


def model_bytes(fm: FittedMap, ids: Optional[Sequence[str]] = None, method: Optional[str] = None) -> bytes:
    o = fm.ordering
    n_loc, n, m, mp = fm.size, fm.n, fm.m, fm.m_prime
    ids = [str(i) for i in range(n_loc)] if ids is None else [str(i) for i in ids]
    meta = {"hyperparams": fm.hp.to_dict(), "ids": ids, "method": method or fm.hp.mode}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_HEADER.pack(MAGIC, VERSION, n_loc, n, m, mp, o.dim, o.m_max, len(blob)), blob]
    le = lambda a, t: np.ascontiguousarray(a, dtype=t).tobytes()
    parts += [le(o.to_original_coords(), "<f8"), le(o.perm, "<i8"), le(o.scales, "<f8"),
              le(o.neighbors, "<i8"), le(fm.y, "<f8"), le(fm.weights, "<f8")]
    scal = np.column_stack([fm.alpha_t, fm.beta_t, fm.tau2, fm.sigma2])
    comp = np.hstack([scal, fm.xi, _packed_lower(fm.chol).reshape(n_loc, -1), fm.u.reshape(n_loc, -1)])
    parts.append(le(comp, "<f8"))
    return b"".join(parts)


def save_model(path, fm: FittedMap, ids=None, method=None) -> None:
    Path(path).write_bytes(model_bytes(fm, ids, method))


def load_model(path) -> tuple[FittedMap, dict]:
    """Read a model file; returns the map and its metadata (ids, method, ...)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise DataError(f"{path}: not a model file")
    magic, version, n_loc, n, m, mp, dim, m_max, blen = _HEADER.unpack_from(data)
    if version != VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    pos = _HEADER.size
    meta = json.loads(data[pos:pos + blen].decode())
    pos += blen

    def take(count, dtype, shape):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        if pos + size > len(data):
            raise DataError(f"{path}: truncated model file")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(dtype[1:], copy=True)
        pos += size
        return arr.reshape(shape)

    coords = take(n_loc * dim, "<f8", (n_loc, dim))
    perm = take(n_loc, "<i8", (n_loc,))
    scales = take(n_loc, "<f8", (n_loc,))
    nbrs = take(n_loc * m_max, "<i8", (n_loc, m_max))
    y = take(n * n_loc, "<f8", (n, n_loc))
    weights = take(n_loc * mp, "<f8", (n_loc, mp))
    width = 4 + m + n * (n + 1) // 2 + n
    comp = take(n_loc * width, "<f8", (n_loc, width))
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in model file")
    ordering = Ordering(perm=perm, scales=scales, neighbors=nbrs, coords=coords[perm], m_max=m_max)
    hp = HyperParams.from_dict(meta["hyperparams"])
    c0 = 4 + m
    fm = FittedMap(hp=hp, ordering=ordering, y=y, xi=comp[:, 4:c0].copy(), tau2=comp[:, 2].copy(),
                   sigma2=comp[:, 3].copy(), weights=weights, alpha_t=comp[:, 0].copy(),
                   beta_t=comp[:, 1].copy(),
                   chol=_unpack_lower(comp[:, c0:c0 + n * (n + 1) // 2], n),
                   u=comp[:, c0 + n * (n + 1) // 2:].copy())
    return fm, meta


# -- Gaussian (MatCov) models -------------------------------------------------
def save_gaussian(path, family, ordering: Ordering, ids: Sequence[str], loglik: Optional[float] = None) -> None:
    """MatCov models are three numbers plus geometry, so they are stored as JSON."""
    doc = {"format": "shrinktm-gaussian", "version": VERSION, "method": "matcov",
           "family": family.to_dict(), "ids": list(map(str, ids)),
           "coords": ordering.to_original_coords().tolist(), "first": int(ordering.perm[0]),
           "m_max": ordering.m_max, "loglik": loglik,
           "params": {"variance": family.variance, "range": family.range, "smoothness": family.smoothness}}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_any(path):
    """Load either model kind; returns ``(model, meta)``."""
    from .basegauss import BaseFamily
    from .geometry import maximin_order
    from .score import GaussianModel

    raw = Path(path).read_bytes()
    if raw[:8] == MAGIC:
        return load_model(path)
    try:
        doc = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: not a model file") from None
    if doc.get("format") != "shrinktm-gaussian":
        raise DataError(f"{path}: not a model file")
    ordering = maximin_order(np.array(doc["coords"]), first=doc["first"], m_max=doc["m_max"])
    model = GaussianModel(BaseFamily(**doc["family"]), ordering)
    return model, doc
