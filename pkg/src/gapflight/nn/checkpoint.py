"""Checkpoint format: a JSON manifest plus one raw little-endian blob.

Round-trips are bit-exact; the manifest records array names, shapes,
dtypes, byte offsets and a step counter.
"""

import json
from pathlib import Path

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_checkpoint(path, arrays, step=0, meta=None):
    """arrays: dict name -> ndarray. Writes <path>.json and <path>.bin."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        kind = str(arr.dtype)
        if kind not in _DTYPES:
            raise ValueError(f"unsupported checkpoint dtype {kind} for {name}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[kind], copy=False).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": kind,
            "offset": offset,
            "nbytes": len(raw),
        })
        offset += len(raw)
        blobs.append(raw)
    manifest = {"step": int(step), "arrays": entries}
    if meta:
        manifest["meta"] = meta
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(path.with_suffix(".bin"), "wb") as f:
        f.write(b"".join(blobs))


def load_checkpoint(path):
    """Returns (arrays dict, step, meta dict)."""
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        manifest = json.load(f)
    blob = path.with_suffix(".bin").read_bytes()
    arrays = {}
    for e in manifest["arrays"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(e["dtype"])
    return arrays, manifest["step"], manifest.get("meta", {})


def params_to_arrays(params):
    out = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name}")
        out[p.name] = p.val
    return out


def load_params(params, arrays):
    for p in params:
        src = arrays[p.name]
        if tuple(src.shape) != tuple(p.val.shape):
            raise ValueError(f"shape mismatch for {p.name}: {src.shape} vs {p.val.shape}")
        p.val[...] = src.astype(p.val.dtype)
