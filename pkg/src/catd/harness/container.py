"""On-disk container: manifest.json plus one raw binary payload per array.

Payloads are little-endian IEEE-754, row-major, headerless; float32 by
default, float64 for oracle-grade arrays. The manifest records shape,
dtype, byte length, and a sha256 digest per array, so loads are
integrity-checked and round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np

from ..errors import CorruptContainerError, InputError

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise InputError(
        f"container arrays must be float32 or float64, got {arr.dtype}"
    )


def save_container(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    """Write arrays + metadata to a container directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in arrays.items():
        if not _NAME_RE.match(name):
            raise InputError(f"invalid array name {name!r}")
        arr = np.asarray(arr)
        tag = _dtype_tag(arr)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"array {name!r} contains non-finite values")
        payload = np.ascontiguousarray(arr).astype(_DTYPES[tag], copy=False).tobytes()
        (path / f"{name}.bin").write_bytes(payload)
        entries.append(
            {
                "name": name,
                "file": f"{name}.bin",
                "dtype": tag,
                "shape": list(arr.shape),
                "byte_offset": 0,
                "n_bytes": len(payload),
                "sha256": hashlib.sha256(payload).hexdigest(),
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "arrays": entries,
        "metadata": metadata or {},
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back; integrity failures name the offending array."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CorruptContainerError(f"no {MANIFEST_NAME} under {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise CorruptContainerError(
            f"unsupported schema version {manifest.get('schema_version')}"
        )
    arrays = {}
    for entry in manifest["arrays"]:
        name = entry["name"]
        payload_path = path / entry["file"]
        if not payload_path.is_file():
            raise CorruptContainerError(
                f"array {name!r}: payload file {entry['file']} is missing"
            )
        payload = payload_path.read_bytes()
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CorruptContainerError(
                f"array {name!r}: unknown dtype {entry['dtype']}"
            )
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        if len(payload) != entry["n_bytes"] or len(payload) != expected:
            raise CorruptContainerError(
                f"array {name!r}: payload is {len(payload)} bytes, "
                f"expected {expected}"
            )
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise CorruptContainerError(f"array {name!r}: checksum mismatch")
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, manifest.get("metadata", {})


def git_blob_sha1(path) -> str:
    """Git-style content hash of a file (blob object id)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def container_content_hash(path) -> str:
    """Content hash of a container: the git blob id of its manifest.

    The manifest embeds each payload's sha256, so this transitively
    covers all array bytes.
    """
    return git_blob_sha1(Path(path) / MANIFEST_NAME)
