"""Versioned, checksummed on-disk artifacts.

Binary container (all integers little-endian)::

    magic      4 bytes   b"ACUS" sparse/neighbors, b"ACUD" dense, b"ACUM" model
    version    u32
    mlen       u64       length of the manifest
    manifest   mlen bytes of UTF-8 JSON (kind, dims, checksum, config, seeds)
    payload    kind-specific sections, see the ``_pack_*`` helpers

The checksum is CRC-64/XZ over the payload bytes. Core-user sets are
stored as ``user_index,score`` CSV and reports/configs/transforms as JSON.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from numba import njit

from .coreselect import CoreUserSet, NeighborLists
from .errors import ChecksumError, KindError, StoreError, VersionError
from .ratings import PreprocessTransform, SparseRatings
from .training import ACUModel, FactorBlock, TrainConfig

FORMAT_VERSION = 1
MAGIC = {"sparse": b"ACUS", "neighbors": b"ACUS", "dense": b"ACUD", "model": b"ACUM"}
EXTENSIONS = {".acus": "sparse", ".acud": "dense", ".acum": "model", ".csv": "coreset",
              ".json": "json"}
_HEADER = struct.Struct("<4sIQ")


def _crc64_table():
    poly = 0xC96C5795D7870F42
    table = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table[i] = crc
    return table


_CRC_TABLE = _crc64_table()


@njit(cache=True)
def _crc64_update(data, table):
    crc = np.uint64(0xFFFFFFFFFFFFFFFF)
    mask = np.uint64(0xFF)
    eight = np.uint64(8)
    for b in data:
        crc = table[(crc ^ np.uint64(b)) & mask] ^ (crc >> eight)
    return crc ^ np.uint64(0xFFFFFFFFFFFFFFFF)


def crc64(data):
    """CRC-64/XZ (ECMA-182 polynomial, reflected)."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    return int(_crc64_update(arr, _CRC_TABLE))


# payload packing -------------------------------------------------------------

def _u64(*values):
    return struct.pack(f"<{len(values)}Q", *values)


def _arr(a, dtype):
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def u64(self, n=1):
        vals = struct.unpack_from(f"<{n}Q", self.buf, self.pos)
        self.pos += 8 * n
        return vals if n > 1 else vals[0]

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        nbytes = dt.itemsize * count
        if self.pos + nbytes > len(self.buf):
            raise StoreError("payload shorter than its declared sections")
        out = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos)
        self.pos += nbytes
        return out.astype(np.dtype(dtype).newbyteorder("="))

    def done(self):
        if self.pos != len(self.buf):
            raise StoreError(f"{len(self.buf) - self.pos} trailing payload bytes")


def _pack_sparse(R):
    return (_u64(R.n_users, R.n_items, R.nnz) + _arr(R.indptr, "u8")
            + _arr(R.indices, "u4") + _arr(R.data, "f8"))


def _unpack_sparse(rd):
    n_users, n_items, nnz = rd.u64(3)
    indptr = rd.array("u8", n_users + 1).astype(np.int64)
    indices = rd.array("u4", nnz).astype(np.int64)
    data = rd.array("f8", nnz)
    return n_users, n_items, indptr, indices, data


def _pack_dense(A):
    A = np.asarray(A, dtype=np.float64)
    return _u64(*A.shape) + _arr(A, "f8")


def _unpack_dense(rd):
    r, c = rd.u64(2)
    return rd.array("f8", r * c).reshape(r, c)


def _pack_model(model):
    out = [_u64(len(model.blocks))]
    for blk in model.blocks:
        out += [_pack_dense(blk.U), _u64(blk.S.shape[0]), _arr(blk.S, "f8"),
                _pack_dense(blk.V_unit)]
    out.append(_pack_dense(model.R_acu))
    return b"".join(out)


def _unpack_model(rd, manifest):
    blocks = []
    for _ in range(rd.u64()):
        U = _unpack_dense(rd)
        S = rd.array("f8", rd.u64())
        V = _unpack_dense(rd)
        blocks.append(FactorBlock(U, S, V))
    R_acu = _unpack_dense(rd)
    config = TrainConfig(**manifest["config"])
    return ACUModel(blocks, R_acu, config, manifest.get("trace", []))


# public API ------------------------------------------------------------------

def kind_of(obj):
    if isinstance(obj, SparseRatings):
        return "sparse"
    if isinstance(obj, NeighborLists):
        return "neighbors"
    if isinstance(obj, ACUModel):
        return "model"
    if isinstance(obj, CoreUserSet):
        return "coreset"
    if isinstance(obj, PreprocessTransform):
        return "transform"
    if isinstance(obj, np.ndarray) and obj.ndim == 2:
        return "dense"
    if isinstance(obj, dict):
        return "json"
    raise StoreError(f"don't know how to store {type(obj).__name__}")


def _binary_payload(obj, kind):
    if kind == "sparse":
        return _pack_sparse(obj), {"dims": [obj.n_users, obj.n_items], "nnz": obj.nnz}
    if kind == "neighbors":
        n = obj.n_entities
        R_like = _u64(n, n, obj.neighbors.shape[0]) + _arr(obj.indptr, "u8") \
            + _arr(obj.neighbors, "u4") + _arr(obj.scores, "f8")
        return R_like, {"dims": [n, n], "nnz": int(obj.neighbors.shape[0])}
    if kind == "dense":
        return _pack_dense(obj), {"dims": list(obj.shape)}
    if kind == "model":
        return _pack_model(obj), {"dims": list(obj.R_acu.shape), "config": obj.config.to_json(),
                                  "trace": obj.trace}
    raise StoreError(f"{kind} is not a binary kind")


def save(obj, path, config=None, seeds=None):
    """Write ``obj`` to ``path`` and return its manifest dict."""
    path = Path(path)
    kind = kind_of(obj)
    if kind == "coreset":
        path.write_text(obj.to_csv())
        return {"kind": kind, "format_version": FORMAT_VERSION}
    if kind in ("transform", "json"):
        body = obj.to_json() if kind == "transform" else obj
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return {"kind": kind, "format_version": FORMAT_VERSION}

    payload, extra = _binary_payload(obj, kind)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind,
                "checksum": f"{crc64(payload):016x}", "seeds": seeds}
    if config is not None:
        manifest["run_config"] = config
    manifest.update(extra)
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC[kind], FORMAT_VERSION, len(mbytes)))
        fh.write(mbytes)
        fh.write(payload)
    return manifest


def read_manifest(path):
    blob = Path(path).read_bytes()
    manifest, _ = _split(blob, path)
    return manifest


def _split(blob, path):
    if len(blob) < _HEADER.size:
        raise StoreError(f"{path}: file too short for a header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic not in MAGIC.values():
        raise KindError(f"{path}: unknown magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version} unsupported")
    try:
        manifest = json.loads(blob[_HEADER.size:_HEADER.size + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError(f"{path}: corrupt manifest: {exc}") from None
    if MAGIC.get(manifest.get("kind")) != magic:
        raise KindError(f"{path}: manifest kind {manifest.get('kind')!r} disagrees with magic")
    return manifest, blob[_HEADER.size + mlen:]


def load(path, expected_kind=None):
    """Read an artifact written by :func:`save`, checking kind, version and checksum."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix_kind = EXTENSIONS.get(path.suffix)
    if suffix_kind == "coreset":
        if expected_kind not in (None, "coreset"):
            raise KindError(f"{path}: CSV holds a core-user set, not {expected_kind}")
        return CoreUserSet.from_csv(path.read_text())
    if suffix_kind == "json":
        body = json.loads(path.read_text())
        if expected_kind == "transform":
            return PreprocessTransform.from_json(body)
        return body

    manifest, payload = _split(path.read_bytes(), path)
    kind = manifest["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise KindError(f"{path}: holds {kind}, expected {expected_kind}")
    if f"{crc64(payload):016x}" != manifest["checksum"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    rd = _Reader(payload)
    if kind == "sparse":
        obj = SparseRatings(*_unpack_sparse(rd))
    elif kind == "neighbors":
        n, _, indptr, nb, sc = _unpack_sparse(rd)
        obj = NeighborLists(indptr, nb, sc)
    elif kind == "dense":
        obj = _unpack_dense(rd)
    else:
        obj = _unpack_model(rd, manifest)
    rd.done()
    return obj
