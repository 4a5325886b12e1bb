"""Flat parameter archive: manifest of names/shapes + raw little-endian float64 blobs.

Layout inside the zip:
    manifest.json   {"format_version": 1, "tensors": [{"name", "shape", "file"}], "metadata": {...}}
    arrays/0000.bin raw '<f8' bytes in row-major order, one file per tensor

Tensor names may contain '/' and '.', so blobs are stored under sequential
file names and resolved through the manifest.
"""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def save_archive(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    entries = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for i, (name, arr) in enumerate(tensors.items()):
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            fname = f"arrays/{i:04d}.bin"
            entries.append({"name": name, "shape": list(arr.shape), "file": fname})
            zf.writestr(fname, arr.astype("<f8").tobytes(order="C"))
        manifest = {
            "format_version": FORMAT_VERSION,
            "tensors": entries,
            "metadata": metadata or {},
        }
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors, metadata). Raises DataError on malformed archives."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except KeyError:
                raise DataError(f"{path}: missing manifest.json")
            if manifest.get("format_version") != FORMAT_VERSION:
                raise DataError(
                    f"{path}: unsupported archive format_version "
                    f"{manifest.get('format_version')!r} (expected {FORMAT_VERSION})"
                )
            tensors: dict[str, np.ndarray] = {}
            for entry in manifest["tensors"]:
                shape = tuple(entry["shape"])
                raw = zf.read(entry["file"])
                arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
                if arr.size != int(np.prod(shape, dtype=np.int64)):
                    raise DataError(f"{path}: tensor {entry['name']!r} has {arr.size} values, expected shape {shape}")
                tensors[entry["name"]] = arr.reshape(shape)
            return tensors, manifest.get("metadata", {})
    except zipfile.BadZipFile as e:
        raise DataError(f"{path}: not a parameter archive ({e})") from e
