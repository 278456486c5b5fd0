"""Model directory format: spec.json (layer graph) + params.dspt (weights).

DSPT is a tiny named-tensor container:

    magic "DSPT" | version u16 LE | tensor count u32 LE | entries...
    entry: name length u16 LE | name bytes (utf-8) | rank u8 |
           dims u32 LE each | payload float64 LE row-major

Writers emit tensors in a fixed order so identical models produce
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError
from .net import LayerSpec, NetworkModel, NetworkSpec, parameterized_layers, validate_params

MAGIC = b"DSPT"
VERSION = 1

SPEC_FILE = "spec.json"
PARAMS_FILE = "params.dspt"


def write_dspt(path, tensors) -> None:
    """Write named tensors (iterable of (name, array)) in the given order."""
    items = [(name, np.ascontiguousarray(arr, dtype=np.float64)) for name, arr in tensors]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(items)))
        for name, arr in items:
            raw = name.encode("utf-8")
            if arr.ndim < 1 or arr.ndim > 4:
                raise ContractError(f"tensor {name!r} has unsupported rank {arr.ndim}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_dspt(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContractError(f"{path}: not a DSPT file (bad magic {data[:4]!r})")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported DSPT version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        rank = data[off]
        off += 1
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    if off != len(data):
        raise ContractError(f"{path}: {len(data) - off} trailing bytes")
    return out


def _layer_to_json(layer: LayerSpec) -> dict:
    doc = {"name": layer.name, "kind": layer.kind, "inputs": list(layer.inputs)}
    for key in ("out_dim", "filters", "padding", "stride", "parts", "index"):
        val = getattr(layer, key)
        if val is not None:
            doc[key] = val
    if layer.kernel is not None:
        doc["kernel"] = list(layer.kernel)
    return doc


def _layer_from_json(doc: dict) -> LayerSpec:
    kernel = tuple(doc["kernel"]) if "kernel" in doc else None
    return LayerSpec(
        name=doc["name"],
        kind=doc["kind"],
        inputs=tuple(doc["inputs"]),
        out_dim=doc.get("out_dim"),
        filters=doc.get("filters"),
        kernel=kernel,
        padding=doc.get("padding"),
        stride=doc.get("stride"),
        parts=doc.get("parts"),
        index=doc.get("index"),
    )


def spec_to_json(spec: NetworkSpec) -> dict:
    return {
        "format": "dspl-model",
        "version": VERSION,
        "input_shape": list(spec.input_shape),
        "output": spec.output,
        "layers": [_layer_to_json(l) for l in spec.layers],
    }


def spec_from_json(doc: dict) -> NetworkSpec:
    if doc.get("format") != "dspl-model":
        raise ContractError("spec.json is not a dspl model description")
    return NetworkSpec(
        input_shape=tuple(doc["input_shape"]),
        layers=tuple(_layer_from_json(d) for d in doc["layers"]),
        output=doc["output"],
    )


def save_model(model: NetworkModel, out_dir, extra_meta: dict | None = None) -> None:
    """Write spec.json + params.dspt (and optional meta.json) into out_dir."""
    validate_params(model)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SPEC_FILE, "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(model.spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    tensors = []
    for layer in parameterized_layers(model.spec):
        tensors.append((f"{layer.name}.W", model.params[layer.name]["W"]))
        tensors.append((f"{layer.name}.b", model.params[layer.name]["b"]))
    write_dspt(out / PARAMS_FILE, tensors)
    if extra_meta is not None:
        with open(out / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(extra_meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_model(model_dir) -> NetworkModel:
    root = Path(model_dir)
    with open(root / SPEC_FILE, encoding="utf-8") as fh:
        spec = spec_from_json(json.load(fh))
    flat = read_dspt(root / PARAMS_FILE)
    params: dict[str, dict[str, np.ndarray]] = {}
    for key, arr in flat.items():
        layer, _, which = key.rpartition(".")
        if which not in ("W", "b") or not layer:
            raise ContractError(f"unexpected tensor name {key!r} in params.dspt")
        params.setdefault(layer, {})[which] = arr
    model = NetworkModel(spec=spec, params=params)
    validate_params(model)
    return model


def load_meta(model_dir) -> dict:
    path = Path(model_dir) / "meta.json"
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
