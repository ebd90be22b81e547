"""On-disk formats.

Tensors are flat little-endian binaries with a JSON sidecar next to them
(``<file>.json``) holding ``{"shape": [...], "dtype": "f32"}``. Supported
dtypes are ``f32`` (default), ``f64``, ``i32`` and ``i64``; everything
floating point is widened to float64 on load.

A weight bundle is one binary blob plus a JSON manifest::

    {"format": "latentmesh-weights", "dtype": "f32", "data": "weights.bin",
     "tensors": [{"name": "ldmp.mesh.blocks.0.mlp.w1", "shape": [512, 1024], "offset": 0}, ...]}

where ``offset`` counts elements, not bytes. Mesh assets are a JSON file
naming tensor files for the template, the two face arrays, and the COO
triplets of the upsampling matrix.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import AssetError, LatentMeshError

__all__ = [
    "save_tensor",
    "load_tensor",
    "flatten_weights",
    "save_weights",
    "load_weights",
    "save_mesh_assets",
    "load_mesh_assets",
]

DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "i64": "<i8"}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise AssetError(path, "file not found") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise AssetError(path, f"unreadable: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise AssetError(path, f"invalid JSON: {exc}") from exc


def save_tensor(path, array, dtype: str = "f32") -> Path:
    path = Path(path)
    if dtype not in DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    arr = np.ascontiguousarray(array, dtype=DTYPES[dtype])
    path.write_bytes(arr.tobytes())
    _write_json(sidecar_path(path), {"shape": list(arr.shape), "dtype": dtype})
    return path


def _read_raw(path: Path, dtype: str, count: int, offset: int = 0) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise AssetError(path, "file not found") from None
    except OSError as exc:
        raise AssetError(path, f"unreadable: {exc}") from exc
    item = np.dtype(DTYPES[dtype]).itemsize
    if len(raw) % item:
        raise AssetError(path, f"size {len(raw)} bytes is not a multiple of the {dtype} item size")
    data = np.frombuffer(raw, dtype=DTYPES[dtype])
    if offset + count > data.size:
        raise AssetError(path, f"holds {data.size} values, need {offset + count}")
    return data[offset:offset + count]


def load_tensor(path) -> np.ndarray:
    """Load a tensor file; floats come back as float64, integers as int64."""
    path = Path(path)
    meta = _read_json(sidecar_path(path))
    try:
        shape = [int(s) for s in meta["shape"]]
        dtype = meta.get("dtype", "f32")
    except (KeyError, TypeError, ValueError) as exc:
        raise AssetError(sidecar_path(path), f"malformed sidecar: {exc}") from exc
    if dtype not in DTYPES or any(s < 0 for s in shape):
        raise AssetError(sidecar_path(path), f"bad dtype {dtype!r} or shape {shape}")
    count = int(np.prod(shape)) if shape else 1
    data = _read_raw(path, dtype, count)
    if data.size != count or path.stat().st_size != count * np.dtype(DTYPES[dtype]).itemsize:
        raise AssetError(path, f"size does not match sidecar shape {shape}")
    out = data.reshape(shape)
    out = out.astype(np.int64) if dtype.startswith("i") else out.astype(np.float64)
    if out.dtype == np.float64 and not np.all(np.isfinite(out)):
        raise AssetError(path, "contains non-finite values")
    return out


# ---------------------------------------------------------------------------
# weight bundles


def flatten_weights(obj, prefix: str = ""):
    """Yield ``(dotted_name, array)`` for every array in a tree of weight dataclasses."""
    if isinstance(obj, np.ndarray):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is not None:
                yield from flatten_weights(value, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from flatten_weights(item, f"{prefix}.{i}")
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__} at {prefix!r}")


def _assign(obj, dotted: str, value):
    parts = dotted.split(".")
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    last = parts[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def save_weights(manifest_path, weights, data_name: str = None) -> Path:
    manifest_path = Path(manifest_path)
    data_name = data_name or manifest_path.with_suffix(".bin").name
    entries, chunks, offset = [], [], 0
    for name, arr in flatten_weights(weights):
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").ravel())
        offset += arr.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f4")
    (manifest_path.parent / data_name).write_bytes(blob.tobytes())
    _write_json(manifest_path, {"format": "latentmesh-weights", "dtype": "f32", "data": data_name,
                                "tensors": entries})
    return manifest_path


def load_weights(manifest_path, template):
    """Fill ``template`` (a freshly initialised weight tree) from a bundle.

    Every array in the template must be present in the bundle with the same
    shape; the template is modified in place and returned.
    """
    manifest_path = Path(manifest_path)
    meta = _read_json(manifest_path)
    try:
        data_path = manifest_path.parent / meta["data"]
        dtype = meta.get("dtype", "f32")
        table = {e["name"]: (tuple(e["shape"]), int(e["offset"])) for e in meta["tensors"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise AssetError(manifest_path, f"malformed weight manifest: {exc}") from exc
    if dtype not in ("f32", "f64"):
        raise AssetError(manifest_path, f"unsupported weight dtype {dtype!r}")
    for name, arr in list(flatten_weights(template)):
        if name not in table:
            raise AssetError(manifest_path, f"missing tensor {name}")
        shape, offset = table[name]
        if shape != arr.shape:
            raise AssetError(manifest_path, f"tensor {name} has shape {list(shape)}, expected {list(arr.shape)}")
        values = _read_raw(data_path, dtype, arr.size, offset).astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(values)):
            raise AssetError(data_path, f"tensor {name} contains non-finite values")
        _assign(template, name, values)
    return template


# ---------------------------------------------------------------------------
# mesh assets


def save_mesh_assets(path, mesh) -> Path:
    """Write a :class:`~latentmesh.ldmp.MeshState` as JSON plus tensor files beside it."""
    path = Path(path)
    stem = path.with_suffix("")
    coo = mesh.upsample_matrix.tocoo()
    files = {
        "template": (mesh.template, "f32"),
        "faces": (mesh.faces, "i32"),
        "fine_faces": (mesh.fine_faces, "i32"),
        "upsample_rows": (coo.row, "i32"),
        "upsample_cols": (coo.col, "i32"),
        # f64 keeps row sums within the 1e-9 stochasticity tolerance
        "upsample_values": (coo.data, "f64"),
    }
    manifest = {"format": "latentmesh-mesh", "upsample_shape": list(mesh.upsample_matrix.shape)}
    for key, (arr, dtype) in files.items():
        name = f"{stem.name}.{key}.bin"
        save_tensor(path.parent / name, arr, dtype)
        manifest[key] = name
    _write_json(path, manifest)
    return path


def load_mesh_assets(path):
    from .ldmp import MeshState

    path = Path(path)
    meta = _read_json(path)
    try:
        arrays = {k: load_tensor(path.parent / meta[k]) for k in
                  ("template", "faces", "fine_faces", "upsample_rows", "upsample_cols", "upsample_values")}
        shape = tuple(int(s) for s in meta["upsample_shape"])
    except KeyError as exc:
        raise AssetError(path, f"mesh manifest is missing {exc}") from exc
    try:
        u = sp.csr_matrix((arrays["upsample_values"], (arrays["upsample_rows"], arrays["upsample_cols"])),
                          shape=shape)
        return MeshState(template=arrays["template"], upsample_matrix=u,
                         faces=arrays["faces"], fine_faces=arrays["fine_faces"])
    except (LatentMeshError, ValueError) as exc:
        raise AssetError(path, f"invalid mesh assets: {exc}") from exc
