"""Checkpoints: a JSON manifest plus a sidecar of little-endian float32 arrays.

The sidecar is the raw concatenation of every array in manifest order;
each manifest entry records its name, shape and element offset.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mlp import ParamSet

FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def save_checkpoint(
    path: str | Path,
    networks: list[ParamSet],
    extras: dict[str, np.ndarray] | None = None,
    meta: dict | None = None,
) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.bin``; returns both paths."""
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    blob_path = path.with_suffix(".bin")
    chunks: list[np.ndarray] = []
    offset = 0

    def entry(name: str, arr: np.ndarray) -> dict:
        nonlocal offset
        flat = np.ascontiguousarray(arr, dtype=_LE_F32).ravel()
        chunks.append(flat)
        item = {"name": name, "shape": list(arr.shape), "offset": offset}
        offset += flat.size
        return item

    manifest = {
        "format_version": FORMAT_VERSION,
        "networks": [
            {
                "name": net.name,
                "layer_sizes": list(net.layer_sizes),
                "activation": net.activation,
                "arrays": [entry(n, a) for n, a in net.named_arrays().items()],
            }
            for net in networks
        ],
        "extras": [entry(n, a) for n, a in (extras or {}).items()],
        "blob": blob_path.name,
        "total_floats": 0,
    }
    manifest["total_floats"] = offset
    manifest.update(meta or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(blob_path, "wb") as fh:
        for c in chunks:
            fh.write(c.tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path, blob_path


def load_checkpoint(path: str | Path, dtype=np.float32):
    """Returns ``(networks by name, extras by name, manifest dict)``."""
    manifest_path = Path(path).with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = np.fromfile(manifest_path.parent / manifest["blob"], dtype=_LE_F32)
    if blob.size != manifest["total_floats"]:
        raise ValueError(f"sidecar holds {blob.size} floats, manifest says {manifest['total_floats']}")

    def read(item: dict) -> np.ndarray:
        n = int(np.prod(item["shape"], dtype=np.int64))
        return blob[item["offset"] : item["offset"] + n].reshape(item["shape"]).astype(dtype)

    networks = {}
    for net in manifest["networks"]:
        arrays = [read(item) for item in net["arrays"]]
        layers = list(zip(arrays[0::2], arrays[1::2]))
        networks[net["name"]] = ParamSet(net["name"], layers, net["activation"], net["layer_sizes"])
    extras = {item["name"]: read(item) for item in manifest["extras"]}
    return networks, extras, manifest
