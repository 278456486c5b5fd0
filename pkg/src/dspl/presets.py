"""Ready-made part-based network topologies.

Both presets share the same three-stage layout: a global stage that maps
the raw input to a shared feature block, a local stage that splits that
block into horizontal parts and processes each part separately (two
stacked transforms whose outputs are summed, then pooled/rectified), and
a fusion stage of per-part fully connected stacks whose outputs are
concatenated, re-mixed by one more dense layer, and concatenated again
into the final embedding.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .net import LayerSpec, NetworkModel, NetworkSpec, infer_shapes


def _fusion_layers(part_outputs: list[str], part_dim: int) -> tuple[list[LayerSpec], str]:
    """Per-part dense(part_dim)+relu+dense(part_dim), concat, remix, concat."""
    layers: list[LayerSpec] = []
    heads = []
    for k, src in enumerate(part_outputs):
        layers += [
            LayerSpec(f"part{k}_fc1", "dense", (src,), out_dim=part_dim),
            LayerSpec(f"part{k}_fc1_relu", "relu", (f"part{k}_fc1",)),
            LayerSpec(f"part{k}_fc2", "dense", (f"part{k}_fc1_relu",), out_dim=part_dim),
        ]
        heads.append(f"part{k}_fc2")
    fused_dim = part_dim * len(part_outputs)
    layers += [
        LayerSpec("fuse_concat", "concat", tuple(heads)),
        LayerSpec("fuse_fc", "dense", ("fuse_concat",), out_dim=fused_dim),
        LayerSpec("embedding", "concat", ("fuse_fc", *heads)),
    ]
    return layers, "embedding"


def preset_fig4() -> NetworkModel:
    """Full-size part network for 230x80x3 inputs, 800-dim embedding.

    Global stage: 64@7x7 valid, 64@5x5 valid, 3x3 maxpool stride 3, ReLU.
    Local stage: 4 horizontal parts, each 32@3x3 same twice with the two
    conv outputs summed elementwise, 3x3 maxpool stride 1, ReLU.
    Fusion: per part dense 100 / ReLU / dense 100, concat to 400, dense
    400, and a final concat of the 400 with the four 100s -> 800.
    """
    layers = [
        LayerSpec("g_conv1", "conv2d", ("input",), filters=64, kernel=(7, 7), padding="valid"),
        LayerSpec("g_conv2", "conv2d", ("g_conv1",), filters=64, kernel=(5, 5), padding="valid"),
        LayerSpec("g_pool", "maxpool", ("g_conv2",), kernel=(3, 3), stride=3),
        LayerSpec("g_relu", "relu", ("g_pool",)),
    ]
    part_outputs = []
    for k in range(4):
        layers += [
            LayerSpec(f"part{k}", "part_split", ("g_relu",), parts=4, index=k),
            LayerSpec(f"part{k}_conv1", "conv2d", (f"part{k}",), filters=32, kernel=(3, 3), padding="same"),
            LayerSpec(f"part{k}_conv2", "conv2d", (f"part{k}_conv1",), filters=32, kernel=(3, 3), padding="same"),
            LayerSpec(f"part{k}_add", "eltwise_add", (f"part{k}_conv1", f"part{k}_conv2")),
            LayerSpec(f"part{k}_pool", "maxpool", (f"part{k}_add",), kernel=(3, 3), stride=1),
            LayerSpec(f"part{k}_relu", "relu", (f"part{k}_pool",)),
        ]
        part_outputs.append(f"part{k}_relu")
    fusion, output = _fusion_layers(part_outputs, part_dim=100)
    spec = NetworkSpec(input_shape=(230, 80, 3), layers=tuple(layers + fusion), output=output)
    infer_shapes(spec)  # fail fast if the wiring is ever broken
    return NetworkModel(spec=spec)


def preset_desk(
    input_shape,
    parts: int,
    part_dim: int,
    *,
    global_dim: int | None = None,
    part_hidden: int = 12,
    global_filters: int = 8,
    part_filters: int = 8,
) -> NetworkModel:
    """Reduced-scale analog of preset_fig4 with configurable extents.

    Rank-1 inputs get dense analogs of the conv stages (the local stage
    becomes two stacked dense layers whose outputs are summed); rank-3
    inputs keep small convolutions. Final embedding dim = 2*parts*part_dim.
    """
    input_shape = tuple(int(d) for d in input_shape)
    if parts < 1:
        raise ConfigError(f"parts must be >= 1, got {parts}")
    if input_shape[0] < parts:
        raise ConfigError(
            f"input height {input_shape[0]} smaller than requested parts {parts}"
        )
    if len(input_shape) == 1:
        if global_dim is None:
            global_dim = max(16, 8 * parts)
        layers = [
            LayerSpec("g_fc", "dense", ("input",), out_dim=global_dim),
            LayerSpec("g_relu", "relu", ("g_fc",)),
        ]
        part_outputs = []
        for k in range(parts):
            layers += [
                LayerSpec(f"part{k}", "part_split", ("g_relu",), parts=parts, index=k),
                LayerSpec(f"part{k}_h1", "dense", (f"part{k}",), out_dim=part_hidden),
                LayerSpec(f"part{k}_h2", "dense", (f"part{k}_h1",), out_dim=part_hidden),
                LayerSpec(f"part{k}_add", "eltwise_add", (f"part{k}_h1", f"part{k}_h2")),
                LayerSpec(f"part{k}_relu", "relu", (f"part{k}_add",)),
            ]
            part_outputs.append(f"part{k}_relu")
    elif len(input_shape) == 3:
        layers = [
            LayerSpec("g_conv1", "conv2d", ("input",), filters=global_filters, kernel=(3, 3), padding="valid"),
            LayerSpec("g_conv2", "conv2d", ("g_conv1",), filters=global_filters, kernel=(3, 3), padding="valid"),
            LayerSpec("g_pool", "maxpool", ("g_conv2",), kernel=(2, 2), stride=2),
            LayerSpec("g_relu", "relu", ("g_pool",)),
        ]
        part_outputs = []
        for k in range(parts):
            layers += [
                LayerSpec(f"part{k}", "part_split", ("g_relu",), parts=parts, index=k),
                LayerSpec(f"part{k}_conv1", "conv2d", (f"part{k}",), filters=part_filters, kernel=(3, 3), padding="same"),
                LayerSpec(f"part{k}_conv2", "conv2d", (f"part{k}_conv1",), filters=part_filters, kernel=(3, 3), padding="same"),
                LayerSpec(f"part{k}_add", "eltwise_add", (f"part{k}_conv1", f"part{k}_conv2")),
                LayerSpec(f"part{k}_pool", "maxpool", (f"part{k}_add",), kernel=(2, 2), stride=1),
                LayerSpec(f"part{k}_relu", "relu", (f"part{k}_pool",)),
            ]
            part_outputs.append(f"part{k}_relu")
    else:
        raise ConfigError(f"desk preset takes rank-1 or rank-3 inputs, got {input_shape}")

    fusion, output = _fusion_layers(part_outputs, part_dim=part_dim)
    spec = NetworkSpec(input_shape=input_shape, layers=tuple(layers + fusion), output=output)
    try:
        shapes = infer_shapes(spec)
    except Exception as exc:
        raise ConfigError(f"desk preset infeasible for input {input_shape}: {exc}") from exc
    assert int(np.prod(shapes[output])) == 2 * parts * part_dim
    return NetworkModel(spec=spec)
