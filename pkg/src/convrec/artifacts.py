"""Deterministic on-disk container for model checkpoints and dataset bundles.

Layout: one JSON header line (sorted keys, fixed separators) followed by the
raw little-endian bytes of each array in header order. Writing the same
payload twice yields byte-identical files, which zip-based formats cannot
guarantee (archive timestamps). That property backs the reproducibility
checks: retraining with a fixed seed must produce the same checkpoint bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import CheckpointError

FORMAT_NAME = "convrec-artifact"
FORMAT_VERSION = 1

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8"), "|u1": np.dtype("|u1")}


def _canonical_dtype(arr: np.ndarray) -> str:
    if arr.dtype == np.uint8:
        return "|u1"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "<i8"
    if np.issubdtype(arr.dtype, np.floating):
        return "<f8"
    raise CheckpointError(f"unsupported array dtype {arr.dtype}")


def save_artifact(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write `arrays` with JSON-serializable `meta` under the given kind tag."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = _canonical_dtype(arr)
        cast = np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False))
        entries.append({"dtype": dtype, "name": name, "shape": list(arr.shape)})
        blobs.append(cast.tobytes())
    header = {
        "arrays": entries,
        "format": FORMAT_NAME,
        "kind": kind,
        "meta": meta,
        "version": FORMAT_VERSION,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_artifact(path, expect_kind: str | None = None):
    """Read a container back. Returns (meta, arrays dict).

    Raises CheckpointError on a corrupt header, version/kind mismatch, or
    truncated payload.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            line = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read artifact {path}: {exc}") from exc
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt artifact header in {path}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported artifact version {header.get('version')} in {path}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(
            f"expected kind {expect_kind!r}, found {header.get('kind')!r} in {path}")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"unknown dtype {entry['dtype']} in {path}")
        shape = tuple(entry["shape"])
        n_items = int(np.prod(shape)) if shape else 1
        n_bytes = n_items * dtype.itemsize
        chunk = payload[offset:offset + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError(f"truncated artifact payload in {path}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += n_bytes
    if offset != len(payload):
        raise CheckpointError(f"trailing bytes in artifact {path}")
    return header["meta"], arrays


def csr_to_arrays(prefix: str, m: sparse.csr_matrix) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_indptr": m.indptr.astype(np.int64),
        f"{prefix}_indices": m.indices.astype(np.int64),
        f"{prefix}_data": m.data.astype(np.float64),
    }


def csr_from_arrays(prefix: str, arrays: dict, shape) -> sparse.csr_matrix:
    return sparse.csr_matrix(
        (arrays[f"{prefix}_data"],
         arrays[f"{prefix}_indices"],
         arrays[f"{prefix}_indptr"]),
        shape=tuple(shape),
    )


def text_list_to_array(items: list[str]) -> np.ndarray:
    """Pack strings into a uint8 blob (newline-separated utf-8)."""
    for s in items:
        if "\n" in s:
            raise CheckpointError("text entries may not contain newlines")
    blob = "\n".join(items).encode("utf-8")
    return np.frombuffer(blob, dtype=np.uint8).copy()


def array_to_text_list(arr: np.ndarray) -> list[str]:
    if arr.size == 0:
        return []
    return arr.tobytes().decode("utf-8").split("\n")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
