"""The voxel lifting network: spec, parameters, forward pass, model file.

Architecture (mirrors the configured widths, nothing is hard-coded):

* stem 3x3x3 conv on the concatenated occupancy + tiled-score channels;
* N encoder stages, each a dense block followed by a stride-2 conv;
* N decoder stages, each a stride-2 transposed conv whose output is
  added elementwise to the same-resolution encoder feature, refined by a
  3x3x3 conv, and read out by a 1x1x1 head conv to J channels;
* every head is upsampled (nearest neighbor) to the full grid, so the
  forward pass emits one full-resolution prediction per decoder stage,
  the last being the primary output.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import FormatError, ShapeError
from ..voxel import ScoreVolume, VoxelGrid
from .autograd import Tensor, no_grad
from .ops import add, concat, conv3d, deconv3d, dense_block, relu, upsample_nearest

MODEL_MAGIC = b"VPN1"


class LayerDef(NamedTuple):
    name: str
    kind: str  # "conv" or "deconv"
    w_shape: tuple[int, ...]
    b_shape: tuple[int, ...]


@dataclass(frozen=True)
class NetworkSpec:
    """Widths and depths of the lifting network; all layers derive from it."""

    joints: int = 18
    stem_channels: int = 8
    stage_channels: tuple[int, ...] = (16, 32, 32)
    dense_layers: int = 2
    growth: int = 8
    kernel: int = 3
    relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.joints < 1 or self.stem_channels < 1 or self.growth < 1:
            raise ValueError("joints, stem_channels and growth must be positive")
        if self.dense_layers < 0:
            raise ValueError("dense_layers must be non-negative")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        if not self.stage_channels:
            raise ValueError("at least one encoder stage is required")

    @property
    def in_channels(self) -> int:
        return self.joints + 1

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    def _skip_channels(self) -> list[int]:
        """Channels of the dense-block output at each encoder resolution."""
        skips = []
        c = self.stem_channels
        for stage_out in self.stage_channels:
            skips.append(c + self.dense_layers * self.growth)
            c = stage_out
        return skips

    def layers(self) -> list[LayerDef]:
        """Ordered layer declarations; this order defines the model file."""
        k = self.kernel
        defs = [LayerDef("stem", "conv", (self.stem_channels, self.in_channels, k, k, k), (self.stem_channels,))]
        c = self.stem_channels
        skips = self._skip_channels()
        for si, stage_out in enumerate(self.stage_channels):
            for li in range(self.dense_layers):
                defs.append(
                    LayerDef(f"enc{si}_dense{li}", "conv", (self.growth, c + li * self.growth, k, k, k), (self.growth,))
                )
            defs.append(LayerDef(f"enc{si}_down", "conv", (stage_out, skips[si], k, k, k), (stage_out,)))
            c = stage_out
        for si in reversed(range(self.num_stages)):
            target = skips[si]
            defs.append(LayerDef(f"dec{si}_up", "deconv", (c, target, k, k, k), (target,)))
            defs.append(LayerDef(f"dec{si}_conv", "conv", (target, target, k, k, k), (target,)))
            defs.append(LayerDef(f"dec{si}_head", "conv", (self.joints, target, 1, 1, 1), (self.joints,)))
            c = target
        return defs

    def to_json(self) -> dict:
        return {
            "joints": self.joints,
            "stem_channels": self.stem_channels,
            "stage_channels": list(self.stage_channels),
            "dense_layers": self.dense_layers,
            "growth": self.growth,
            "kernel": self.kernel,
            "relu": self.relu,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkSpec":
        try:
            return cls(
                joints=int(obj["joints"]),
                stem_channels=int(obj["stem_channels"]),
                stage_channels=tuple(obj["stage_channels"]),
                dense_layers=int(obj["dense_layers"]),
                growth=int(obj["growth"]),
                kernel=int(obj["kernel"]),
                relu=bool(obj["relu"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad network spec: {exc}") from exc


class NetworkParams:
    """Per-layer weight and bias arrays matching a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, tensors: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.spec = spec
        self.tensors = {}
        for layer in spec.layers():
            if layer.name not in tensors:
                raise ShapeError(f"missing parameters for layer {layer.name}")
            w, b = tensors[layer.name]
            if tuple(w.shape) != layer.w_shape or tuple(b.shape) != layer.b_shape:
                raise ShapeError(
                    f"layer {layer.name}: got w{tuple(w.shape)}/b{tuple(b.shape)}, "
                    f"expected w{layer.w_shape}/b{layer.b_shape}"
                )
            self.tensors[layer.name] = (w, b)

    @classmethod
    def initialize(cls, spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> "NetworkParams":
        """He-style fan-in scaled random init, fully determined by the seed."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for layer in spec.layers():
            fan_in = int(np.prod(layer.w_shape[1:])) if layer.kind == "conv" else int(
                layer.w_shape[0] * np.prod(layer.w_shape[2:])
            )
            std = np.sqrt(2.0 / fan_in)
            w = (rng.standard_normal(layer.w_shape) * std).astype(dtype)
            b = np.zeros(layer.b_shape, dtype=dtype)
            tensors[layer.name] = (w, b)
        return cls(spec, tensors)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            self.spec,
            {k: (w.astype(dtype), b.astype(dtype)) for k, (w, b) in self.tensors.items()},
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.spec, {k: (w.copy(), b.copy()) for k, (w, b) in self.tensors.items()}
        )


def _wrap_params(params: NetworkParams, requires_grad: bool) -> dict[str, tuple[Tensor, Tensor]]:
    return {
        name: (Tensor(w, requires_grad=requires_grad), Tensor(b, requires_grad=requires_grad))
        for name, (w, b) in params.tensors.items()
    }


def forward(
    params: NetworkParams,
    x: Tensor | np.ndarray,
    param_tensors: dict[str, tuple[Tensor, Tensor]] | None = None,
) -> list[Tensor]:
    """Run the network on a (N, 1+J, K, K, K) batch.

    Returns one full-resolution (N, J, K, K, K) tensor per decoder stage,
    the last one being the primary prediction.  Pass `param_tensors`
    (from `_wrap_params`) to train against leaf tensors.
    """
    spec = params.spec
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 5 or x.data.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input shape {x.data.shape} does not match (N, {spec.in_channels}, K, K, K)"
        )
    k = x.data.shape[2]
    if x.data.shape[3] != k or x.data.shape[4] != k or k % (2**spec.num_stages) != 0:
        raise ShapeError(f"grid size {x.data.shape[2:]} must be cubic and divisible by {2**spec.num_stages}")

    p = param_tensors if param_tensors is not None else _wrap_params(params, requires_grad=False)
    act = relu if spec.relu else (lambda t: t)

    h = act(conv3d(x, *p["stem"]))
    skips = []
    for si in range(spec.num_stages):
        blocks = [p[f"enc{si}_dense{li}"] for li in range(spec.dense_layers)]
        h = dense_block(h, blocks, activation=act)
        skips.append(h)
        h = act(conv3d(h, *p[f"enc{si}_down"], stride=2, padding="same"))

    outputs = []
    for si in reversed(range(spec.num_stages)):
        h = act(deconv3d(h, *p[f"dec{si}_up"], stride=2))
        h = add(h, skips[si])
        h = act(conv3d(h, *p[f"dec{si}_conv"]))
        head = conv3d(h, *p[f"dec{si}_head"])
        outputs.append(upsample_nearest(head, 2**si))
    return outputs


def voxelposenet_forward(
    grid: VoxelGrid, tiled: ScoreVolume, params: NetworkParams
) -> list[ScoreVolume]:
    """Lift occupancy plus tiled scores to per-stage 3D score volumes."""
    if grid.spec.k != tiled.spec.k or not np.array_equal(grid.spec.center, tiled.spec.center):
        raise ShapeError("occupancy and tiled scores must share one grid")
    if tiled.num_joints != params.spec.joints:
        raise ShapeError(
            f"tiled scores carry {tiled.num_joints} joints, network expects {params.spec.joints}"
        )
    x = np.concatenate(
        [grid.occupancy[None].astype(np.float32), tiled.scores.astype(np.float32)], axis=0
    )[None]
    with no_grad():
        outs = forward(params, x)
    return [ScoreVolume(grid.spec, out.data[0]) for out in outs]


def save_params(params: NetworkParams, path: str):
    """Write the model file: magic, spec JSON, float32 blobs in layer order."""
    spec_blob = json.dumps(params.spec.to_json(), sort_keys=True).encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<I", len(spec_blob)), spec_blob]
    for layer in params.spec.layers():
        w, b = params.tensors[layer.name]
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_params(path: str) -> NetworkParams:
    """Read a model file; raises FormatError on bad magic or truncation."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    (spec_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + spec_len:
        raise FormatError("truncated model file (spec)")
    try:
        spec = NetworkSpec.from_json(json.loads(blob[8 : 8 + spec_len].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt network spec: {exc}") from exc

    offset = 8 + spec_len
    tensors = {}
    for layer in spec.layers():
        w_bytes = int(np.prod(layer.w_shape)) * 4
        b_bytes = int(np.prod(layer.b_shape)) * 4
        if len(blob) < offset + w_bytes + b_bytes:
            raise FormatError(f"truncated model file (layer {layer.name})")
        w = np.frombuffer(blob, dtype="<f4", count=int(np.prod(layer.w_shape)), offset=offset)
        offset += w_bytes
        b = np.frombuffer(blob, dtype="<f4", count=int(np.prod(layer.b_shape)), offset=offset)
        offset += b_bytes
        tensors[layer.name] = (w.reshape(layer.w_shape).copy(), b.reshape(layer.b_shape).copy())
    if offset != len(blob):
        raise FormatError("trailing bytes after final layer")
    return NetworkParams(spec, tensors)
