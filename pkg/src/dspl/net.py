"""Layer graph with hand-written forward and backward passes.

Everything flows through rank<=4 float64 numpy arrays. Image tensors use
(height, width, channels) layout; dense layers flatten whatever they are
given, row-major. Conv weights are stored (kh, kw, c_in, filters), dense
weights (out_dim, in_dim), biases one per output unit/channel.

A network is a DAG of named layers listed in topological order with a
single designated output node. The reserved name "input" refers to the
network input. Supported kinds:

    dense(out_dim)                  y = W @ flatten(x) + b
    conv2d(filters, kh, kw, pad)    stride-1 cross-correlation, pad valid|same
    maxpool(kh, kw, stride)         spatial max per channel, no padding
    relu                            elementwise max(x, 0)
    eltwise_add                     elementwise sum of two equal-shape inputs
    concat                          concatenation along axis 0
    part_split(parts, index)        contiguous row slice: part `index` of
                                    `parts` near-equal row blocks (remainder
                                    rows go to the last part)

Models and tapes are treated as immutable: forward/backward never mutate
their arguments, so shared read-only models are safe to use concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

INPUT = "input"

LAYER_KINDS = ("dense", "conv2d", "maxpool", "relu", "eltwise_add", "concat", "part_split")


def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 array of rank <= 4."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > 4:
        raise ContractError(f"tensors must have rank 1..4, got rank {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ContractError(f"tensor extents must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class LayerSpec:
    """One node of the layer graph; unused fields stay None."""

    name: str
    kind: str
    inputs: tuple[str, ...]
    out_dim: int | None = None            # dense
    filters: int | None = None            # conv2d
    kernel: tuple[int, int] | None = None  # conv2d / maxpool
    padding: str | None = None            # conv2d: "valid" | "same"
    stride: int | None = None             # maxpool
    parts: int | None = None              # part_split
    index: int | None = None              # part_split


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    output: str

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)


def part_bounds(extent: int, parts: int, index: int) -> tuple[int, int]:
    """Row range [lo, hi) of part `index` out of `parts`.

    Rows are divided as evenly as possible; remainder rows are assigned to
    the last part so that the parts are disjoint and cover every row.
    """
    if parts < 1 or extent < parts:
        raise ConfigError(f"cannot split extent {extent} into {parts} parts")
    if not 0 <= index < parts:
        raise ConfigError(f"part index {index} out of range for {parts} parts")
    base = extent // parts
    lo = index * base
    hi = extent if index == parts - 1 else lo + base
    return lo, hi


def _conv_pad(h: int, w: int, kh: int, kw: int, padding: str) -> tuple[int, int, int, int]:
    if padding == "valid":
        return 0, 0, 0, 0
    if padding == "same":
        return (kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2
    raise ConfigError(f"unknown conv padding {padding!r}")


def infer_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Validate the graph and predict every node's output shape.

    Raises ShapeError naming the first offending layer. The returned map
    includes the "input" node.
    """
    shapes: dict[str, tuple[int, ...]] = {INPUT: tuple(spec.input_shape)}
    for layer in spec.layers:
        if layer.name in shapes:
            raise ShapeError(f"layer '{layer.name}': duplicate node name")
        missing = [n for n in layer.inputs if n not in shapes]
        if missing:
            raise ShapeError(
                f"layer '{layer.name}': inputs {missing} undefined or not topologically earlier"
            )
        ins = [shapes[n] for n in layer.inputs]
        shapes[layer.name] = _infer_one(layer, ins)
    if spec.output not in shapes:
        raise ShapeError(f"output node '{spec.output}' does not exist")
    return shapes


def _infer_one(layer: LayerSpec, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
    kind = layer.kind

    def need(n):
        if len(ins) != n:
            raise ShapeError(f"layer '{layer.name}': {kind} takes {n} input(s), got {len(ins)}")

    if kind == "dense":
        need(1)
        if layer.out_dim is None or layer.out_dim < 1:
            raise ShapeError(f"layer '{layer.name}': dense needs out_dim >= 1")
        return (layer.out_dim,)
    if kind == "conv2d":
        need(1)
        (shape,) = ins
        if len(shape) != 3:
            raise ShapeError(f"layer '{layer.name}': conv2d expects rank-3 input, got {shape}")
        h, w, _ = shape
        kh, kw = layer.kernel
        pt, pb, pl, pr = _conv_pad(h, w, kh, kw, layer.padding)
        oh, ow = h + pt + pb - kh + 1, w + pl + pr - kw + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"layer '{layer.name}': kernel {kh}x{kw} larger than input {h}x{w}")
        return (oh, ow, layer.filters)
    if kind == "maxpool":
        need(1)
        (shape,) = ins
        if len(shape) != 3:
            raise ShapeError(f"layer '{layer.name}': maxpool expects rank-3 input, got {shape}")
        h, w, c = shape
        kh, kw = layer.kernel
        s = layer.stride
        if h < kh or w < kw:
            raise ShapeError(f"layer '{layer.name}': pool window {kh}x{kw} exceeds input {h}x{w}")
        return ((h - kh) // s + 1, (w - kw) // s + 1, c)
    if kind == "relu":
        need(1)
        return ins[0]
    if kind == "eltwise_add":
        need(2)
        if ins[0] != ins[1]:
            raise ShapeError(f"layer '{layer.name}': eltwise_add inputs differ: {ins[0]} vs {ins[1]}")
        return ins[0]
    if kind == "concat":
        if not ins:
            raise ShapeError(f"layer '{layer.name}': concat needs at least one input")
        rank = len(ins[0])
        for shape in ins:
            if len(shape) != rank or shape[1:] != ins[0][1:]:
                raise ShapeError(f"layer '{layer.name}': concat inputs incompatible: {ins}")
        return (sum(s[0] for s in ins),) + ins[0][1:]
    if kind == "part_split":
        need(1)
        lo, hi = part_bounds(ins[0][0], layer.parts, layer.index)
        return (hi - lo,) + ins[0][1:]
    raise ShapeError(f"layer '{layer.name}': unknown kind {kind!r}")


@dataclass(frozen=True)
class NetworkModel:
    """Layer graph plus its parameters.

    params maps layer name -> {"W": array, "b": array} for dense/conv2d
    layers; other kinds carry no parameters. Instances are immutable;
    updates build a new model via `with_params`.
    """

    spec: NetworkSpec
    params: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def with_params(self, params: dict[str, dict[str, np.ndarray]]) -> "NetworkModel":
        return replace(self, params=params)

    @property
    def embedding_dim(self) -> int:
        shape = infer_shapes(self.spec)[self.spec.output]
        return int(np.prod(shape))


def parameterized_layers(spec: NetworkSpec) -> list[LayerSpec]:
    return [l for l in spec.layers if l.kind in ("dense", "conv2d")]


def param_shapes(spec: NetworkSpec) -> dict[str, dict[str, tuple[int, ...]]]:
    """Expected parameter shapes per layer, derived from the graph."""
    shapes = infer_shapes(spec)
    out: dict[str, dict[str, tuple[int, ...]]] = {}
    for layer in parameterized_layers(spec):
        in_shape = shapes[layer.inputs[0]]
        if layer.kind == "dense":
            out[layer.name] = {
                "W": (layer.out_dim, int(np.prod(in_shape))),
                "b": (layer.out_dim,),
            }
        else:
            kh, kw = layer.kernel
            out[layer.name] = {
                "W": (kh, kw, in_shape[2], layer.filters),
                "b": (layer.filters,),
            }
    return out


def validate_params(model: NetworkModel) -> None:
    expected = param_shapes(model.spec)
    for name, shapes in expected.items():
        got = model.params.get(name)
        if got is None:
            raise ContractError(f"layer '{name}': parameters missing")
        for key, shape in shapes.items():
            if tuple(got[key].shape) != shape:
                raise ContractError(
                    f"layer '{name}': param {key} has shape {got[key].shape}, expected {shape}"
                )


def init_params(model: NetworkModel, seed: int, std_schedule=(0.01, 0.001)) -> NetworkModel:
    """Draw zero-mean Gaussian weights with a per-layer std schedule.

    The std interpolates linearly from std_schedule[0] at the first
    parameterized layer to std_schedule[1] at the last; biases start at
    exactly zero. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(model.spec)
    names = [l.name for l in parameterized_layers(model.spec)]
    first, last = float(std_schedule[0]), float(std_schedule[1])
    params = {}
    for i, name in enumerate(names):
        frac = i / (len(names) - 1) if len(names) > 1 else 0.0
        std = first + (last - first) * frac
        params[name] = {
            "W": rng.normal(0.0, std, size=shapes[name]["W"]),
            "b": np.zeros(shapes[name]["b"], dtype=np.float64),
        }
    return model.with_params(params)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

# im2col row chunk cap, keeps conv buffers around ~tens of MB on Fig.4 sizes
_CONV_CHUNK_ELEMS = 4_000_000


@dataclass
class Tape:
    """Activation record produced by forward(), consumed by backward()."""

    model: NetworkModel
    values: dict[str, np.ndarray]
    aux: dict[str, object]

    @property
    def embedding(self) -> np.ndarray:
        return self.values[self.model.spec.output]


def forward(model: NetworkModel, x) -> tuple[np.ndarray, Tape]:
    """Run the graph on one input; returns (embedding, tape).

    The tape keeps every intermediate activation (plus pooling argmaxes)
    needed for an exact backward pass. Pure: neither model nor input is
    modified.
    """
    x = as_tensor(x)
    spec = model.spec
    if tuple(x.shape) != tuple(spec.input_shape):
        raise ShapeError(f"input shape {x.shape} does not match spec {spec.input_shape}")
    predicted = infer_shapes(spec)
    values: dict[str, np.ndarray] = {INPUT: x}
    aux: dict[str, object] = {}
    for layer in spec.layers:
        ins = [values[n] for n in layer.inputs]
        out, extra = _forward_one(layer, model.params.get(layer.name), ins)
        if tuple(out.shape) != predicted[layer.name]:
            raise ShapeError(
                f"layer '{layer.name}': produced {out.shape}, predicted {predicted[layer.name]}"
            )
        values[layer.name] = out
        if extra is not None:
            aux[layer.name] = extra
    tape = Tape(model=model, values=values, aux=aux)
    return values[spec.output], tape


def _conv2d_forward(x, W, b, padding):
    h, w, cin = x.shape
    kh, kw, _, filters = W.shape
    pt, pb, pl, pr = _conv_pad(h, w, kh, kw, padding)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    oh, ow = xp.shape[0] - kh + 1, xp.shape[1] - kw + 1
    wmat = W.reshape(kh * kw * cin, filters)
    out = np.empty((oh, ow, filters))
    # chunk over output rows so the im2col buffer stays bounded
    rows_per_chunk = max(1, _CONV_CHUNK_ELEMS // max(1, ow * kh * kw * cin))
    for r0 in range(0, oh, rows_per_chunk):
        r1 = min(oh, r0 + rows_per_chunk)
        windows = np.lib.stride_tricks.sliding_window_view(
            xp[r0 : r1 + kh - 1], (kh, kw), axis=(0, 1)
        )  # (rows, ow, cin, kh, kw) view
        patches = windows.transpose(0, 1, 3, 4, 2).reshape((r1 - r0) * ow, kh * kw * cin)
        out[r0:r1] = (patches @ wmat).reshape(r1 - r0, ow, filters)
    return out + b, (xp, (pt, pb, pl, pr))


def _maxpool_forward(x, kernel, stride):
    h, w, c = x.shape
    kh, kw = kernel
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # (oh, ow, c, kh, kw)
    flat = windows.reshape(oh, ow, c, kh * kw)
    arg = flat.argmax(axis=3)
    out = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
    return out, arg


def _forward_one(layer, params, ins):
    kind = layer.kind
    if kind == "dense":
        x = ins[0].reshape(-1)
        return params["W"] @ x + params["b"], None
    if kind == "conv2d":
        return _conv2d_forward(ins[0], params["W"], params["b"], layer.padding)
    if kind == "maxpool":
        return _maxpool_forward(ins[0], layer.kernel, layer.stride)
    if kind == "relu":
        return np.maximum(ins[0], 0.0), None
    if kind == "eltwise_add":
        return ins[0] + ins[1], None
    if kind == "concat":
        return np.concatenate(ins, axis=0), None
    if kind == "part_split":
        lo, hi = part_bounds(ins[0].shape[0], layer.parts, layer.index)
        return ins[0][lo:hi].copy(), None
    raise ShapeError(f"layer '{layer.name}': unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(model: NetworkModel, tape: Tape, grad_out) -> tuple[dict, np.ndarray]:
    """Chain-rule pass: gradients of grad_out . embedding w.r.t. params and input.

    grad_out must match the embedding shape and the tape must come from a
    forward() call on this very model instance (parameter updates create a
    new model, which invalidates old tapes).
    """
    if tape.model is not model:
        raise ContractError("tape was produced by a different (or updated) model")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    spec = model.spec
    out_shape = tape.values[spec.output].shape
    if tuple(grad_out.shape) != tuple(out_shape):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match embedding {out_shape}")

    grads: dict[str, np.ndarray] = {spec.output: grad_out}
    grad_params: dict[str, dict[str, np.ndarray]] = {}

    def pull(name, shape):
        g = grads.get(name)
        return np.zeros(shape) if g is None else g

    for layer in reversed(spec.layers):
        g = grads.pop(layer.name, None)
        if g is None:
            continue  # node feeds nothing on the path to the output
        ins = [tape.values[n] for n in layer.inputs]
        gp, gis = _backward_one(layer, model.params.get(layer.name), ins, g, tape.aux.get(layer.name))
        if gp is not None:
            grad_params[layer.name] = gp
        for name, gi in zip(layer.inputs, gis):
            if name in grads:
                grads[name] = grads[name] + gi
            else:
                grads[name] = gi
    grad_input = pull(INPUT, tape.values[INPUT].shape)
    return grad_params, grad_input


def _conv2d_backward(x, W, padding, g, cache):
    xp, (pt, pb, pl, pr) = cache
    kh, kw, cin, filters = W.shape
    oh, ow, _ = g.shape
    dW = np.empty_like(W)
    for i in range(kh):
        for j in range(kw):
            # dW[i,j,c,f] = sum_{r,s} xp[r+i, s+j, c] * g[r,s,f]
            dW[i, j] = np.tensordot(xp[i : i + oh, j : j + ow], g, axes=([0, 1], [0, 1]))
    db = g.sum(axis=(0, 1))
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[i : i + oh, j : j + ow] += g @ W[i, j].T
    h, w = x.shape[0], x.shape[1]
    dx = dxp[pt : pt + h, pl : pl + w]
    return {"W": dW, "b": db}, dx


def _maxpool_backward(x, kernel, stride, g, arg):
    kh, kw = kernel
    oh, ow, c = g.shape
    dx = np.zeros_like(x)
    ii, jj, cc = np.meshgrid(np.arange(oh), np.arange(ow), np.arange(c), indexing="ij")
    rows = ii * stride + arg // kw
    cols = jj * stride + arg % kw
    np.add.at(dx, (rows.ravel(), cols.ravel(), cc.ravel()), g.ravel())
    return dx


def _backward_one(layer, params, ins, g, aux):
    kind = layer.kind
    if kind == "dense":
        x = ins[0].reshape(-1)
        gp = {"W": np.outer(g, x), "b": g.copy()}
        return gp, [(params["W"].T @ g).reshape(ins[0].shape)]
    if kind == "conv2d":
        return _conv2d_backward(ins[0], params["W"], layer.padding, g, aux)
    if kind == "maxpool":
        return None, [_maxpool_backward(ins[0], layer.kernel, layer.stride, g, aux)]
    if kind == "relu":
        return None, [g * (ins[0] > 0)]
    if kind == "eltwise_add":
        return None, [g, g.copy()]
    if kind == "concat":
        gis, lo = [], 0
        for x in ins:
            gis.append(g[lo : lo + x.shape[0]].copy())
            lo += x.shape[0]
        return None, gis
    if kind == "part_split":
        lo, hi = part_bounds(ins[0].shape[0], layer.parts, layer.index)
        gi = np.zeros_like(ins[0])
        gi[lo:hi] = g
        return None, [gi]
    raise ShapeError(f"layer '{layer.name}': unknown kind {kind!r}")
