"""Layer graph, parameter storage and the two network builders.

A network is a trunk (convolutions through the embedding activation) plus
a linear head.  Both Siamese branches call the same layer objects, so the
parameters physically exist once; caches are returned per call and never
stored on the layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .ops import ConvSpec, ShapeError

LAYER_KINDS = ("conv3d", "conv2d", "maxpool2x2", "relu", "fully_connected")


class Param:
    """One named parameter tensor with a gradient accumulator."""

    __slots__ = ("name", "data", "grad", "frozen")

    def __init__(self, name: str, data: np.ndarray, frozen: bool = False):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)
        self.frozen = frozen

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    kernel/stride/pad are (depth, height, width) triples for conv kinds;
    conv2d is stored with kernel depth 1.  ``width`` is the output width
    of a fully connected layer.
    """

    kind: str
    out_channels: int = 0
    kernel: tuple[int, int, int] = (1, 1, 1)
    stride: tuple[int, int, int] = (1, 1, 1)
    pad: tuple[int, int, int] = (0, 0, 0)
    width: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and (self.kernel[0] != 1 or self.pad[0] != 0):
            raise ShapeError("conv2d must have kernel depth 1 and no depth padding")
        if self.kind in ("conv3d", "conv2d") and self.out_channels <= 0:
            raise ShapeError("conv layers need a positive channel count")
        if self.kind == "fully_connected" and self.width <= 0:
            raise ShapeError("fully_connected layers need a positive width")


@dataclass(frozen=True)
class NetworkSpec:
    """Input extents (C, D, H, W) plus the ordered layer list."""

    input_shape: tuple[int, int, int, int]
    layers: tuple[LayerSpec, ...]

    def shape_chain(self) -> list[tuple]:
        """Per-layer output shapes; raises ShapeError on inconsistency."""
        shape = tuple(self.input_shape)
        chain = [shape]
        for ls in self.layers:
            if ls.kind in ("conv3d", "conv2d"):
                c, d, h, w = shape
                spec = ConvSpec(ls.out_channels, ls.kernel, ls.stride, ls.pad)
                for axis, extent in enumerate((d, h, w)):
                    if ls.kernel[axis] > extent + 2 * ls.pad[axis]:
                        raise ShapeError(
                            f"kernel {ops.AXIS_NAMES[2 + axis]} {ls.kernel[axis]} exceeds padded "
                            f"input {ops.AXIS_NAMES[2 + axis]} {extent + 2 * ls.pad[axis]}"
                        )
                shape = (
                    ls.out_channels,
                    spec.out_extent(0, d),
                    spec.out_extent(1, h),
                    spec.out_extent(2, w),
                )
            elif ls.kind == "maxpool2x2":
                c, d, h, w = shape
                shape = (c, d, (h + 1) // 2, (w + 1) // 2)
            elif ls.kind == "relu":
                pass
            else:  # fully_connected
                shape = (ls.width,)
            chain.append(shape)
        return chain

    def param_count(self) -> int:
        """Closed-form parameter total (weights + biases)."""
        total = 0
        shape = tuple(self.input_shape)
        for ls, out in zip(self.layers, self.shape_chain()[1:]):
            if ls.kind in ("conv3d", "conv2d"):
                kd, kh, kw = ls.kernel
                total += ls.out_channels * shape[0] * kd * kh * kw + ls.out_channels
            elif ls.kind == "fully_connected":
                total += int(np.prod(shape)) * ls.width + ls.width
            shape = out
        return total

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [
                {
                    "kind": ls.kind,
                    "out_channels": ls.out_channels,
                    "kernel": list(ls.kernel),
                    "stride": list(ls.stride),
                    "pad": list(ls.pad),
                    "width": ls.width,
                }
                for ls in self.layers
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(
                LayerSpec(
                    kind=l["kind"],
                    out_channels=l["out_channels"],
                    kernel=tuple(l["kernel"]),
                    stride=tuple(l["stride"]),
                    pad=tuple(l["pad"]),
                    width=l["width"],
                )
                for l in d["layers"]
            ),
        )


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ConvLayer:
    def __init__(self, name, spec: ConvSpec, in_channels, rng, dtype):
        kd, kh, kw = spec.kernel
        fan_in = in_channels * kd * kh * kw
        self.spec = spec
        self.w = Param(f"{name}.w", he_uniform(rng, (spec.out_channels, in_channels, kd, kh, kw), fan_in, dtype))
        self.b = Param(f"{name}.b", np.zeros(spec.out_channels, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        return ops.conv_forward(x, self.w.data, self.b.data, self.spec)

    def backward(self, dy, cache):
        dx, dw, db = ops.conv_backward(dy, cache)
        if not self.w.frozen:
            self.w.grad += dw
            self.b.grad += db
        return dx


class MaxPoolLayer:
    def params(self):
        return []

    def forward(self, x):
        return ops.maxpool2x2_forward(x)

    def backward(self, dy, cache):
        return ops.maxpool2x2_backward(dy, cache)


class ReluLayer:
    def params(self):
        return []

    def forward(self, x):
        return ops.relu_forward(x)

    def backward(self, dy, cache):
        return ops.relu_backward(dy, cache)


class FcLayer:
    def __init__(self, name, fan_in, width, rng, dtype):
        self.w = Param(f"{name}.w", he_uniform(rng, (fan_in, width), fan_in, dtype))
        self.b = Param(f"{name}.b", np.zeros(width, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        return ops.fc_forward(x, self.w.data, self.b.data)

    def backward(self, dy, cache):
        dx, dw, db = ops.fc_backward(dy, cache)
        if not self.w.frozen:
            self.w.grad += dw
            self.b.grad += db
        return dx


class Network:
    """Trunk + head built from a NetworkSpec.

    The last fully_connected layer of the spec is the head (class logits).
    The embedding is the affine output of the layer before it (a trailing
    ReLU, when present, belongs to the head path only, so embedding
    distances live in the full signed space).  forward/forward_embed do
    not mutate layer state, so the same instance serves both Siamese
    branches.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng([int(seed), 0xD1E5])
        chain = spec.shape_chain()
        fc_positions = [i for i, ls in enumerate(spec.layers) if ls.kind == "fully_connected"]
        if not fc_positions:
            raise ShapeError("network needs at least one fully_connected layer as head")
        self.head_index = fc_positions[-1]
        self.embed_index = self.head_index
        if self.head_index > 0 and spec.layers[self.head_index - 1].kind == "relu":
            self.embed_index = self.head_index - 1

        self.layers = []
        conv_n = 0
        fc_n = 0
        for i, ls in enumerate(spec.layers):
            in_shape = chain[i]
            if ls.kind in ("conv3d", "conv2d"):
                conv_n += 1
                cspec = ConvSpec(ls.out_channels, ls.kernel, ls.stride, ls.pad)
                self.layers.append(ConvLayer(f"conv{conv_n}", cspec, in_shape[0], rng, self.dtype))
            elif ls.kind == "maxpool2x2":
                self.layers.append(MaxPoolLayer())
            elif ls.kind == "relu":
                self.layers.append(ReluLayer())
            else:
                fc_n += 1
                fan_in = int(np.prod(in_shape))
                self.layers.append(FcLayer(f"fc{fc_n}", fan_in, ls.width, rng, self.dtype))
        self.embedding_width = int(np.prod(chain[self.embed_index]))

    # -- parameter plumbing ------------------------------------------------
    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def conv_params(self) -> list[Param]:
        return [p for layer in self.layers if isinstance(layer, ConvLayer) for p in layer.params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def set_conv_frozen(self, frozen: bool):
        for p in self.conv_params():
            p.frozen = frozen

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def state_copy(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]):
        for p in self.params():
            src = state[p.name]
            if src.shape != p.data.shape:
                raise ShapeError(f"parameter {p.name}: stored shape {src.shape} != model shape {p.data.shape}")
            p.data[...] = src.astype(self.dtype)

    def first_fc_index(self) -> int:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, FcLayer):
                return i
        raise ShapeError("network has no fully connected layer")

    # -- evaluation ---------------------------------------------------------
    def run(self, x: np.ndarray, start: int = 0, stop: int | None = None):
        """Evaluate layers[start:stop]; returns (output, caches)."""
        caches = []
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[start:stop]:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def run_backward(self, grad, caches, start: int = 0, stop: int | None = None):
        for layer, cache in zip(reversed(self.layers[start:stop]), reversed(caches)):
            grad = layer.backward(grad, cache)
        return grad

    def forward_embed(self, x: np.ndarray):
        """Run the trunk up to the embedding; returns ((N, E), caches)."""
        out, caches = self.run(x, stop=self.embed_index)
        return out.reshape(out.shape[0], -1), caches

    def forward(self, x: np.ndarray):
        """Full pass; returns (logits, embedding, (trunk caches, head caches))."""
        emb, trunk_caches = self.forward_embed(x)
        logits, head_caches = self.run(emb, start=self.embed_index)
        return logits, emb, (trunk_caches, head_caches)

    def backward(self, d_logits, d_emb, caches):
        """Backprop from head gradient and/or extra embedding gradient.

        fc_backward folds gradients back to its caller's input shape, so no
        explicit flatten bookkeeping is needed between pool and FC6.
        """
        trunk_caches, head_caches = caches
        grad = None
        if d_logits is not None:
            grad = self.run_backward(d_logits, head_caches, start=self.embed_index)
        if d_emb is not None:
            grad = d_emb if grad is None else grad + d_emb
        return self.run_backward(grad, trunk_caches, stop=self.embed_index)


# -- canonical architectures ------------------------------------------------

REDUCED_CHANNELS = (8, 16, 32, 32, 48)
REDUCED_FC = (128, 96)
PAPER_CHANNELS = (96, 256, 512, 512, 512)
PAPER_FC = (1024, 1024)


def backbone_spec(
    input_shape: tuple[int, int, int, int],
    n_classes: int,
    conv_channels: tuple[int, ...],
    fc_widths: tuple[int, int],
    first_kernel: int = 5,
    second_kernel: int = 3,
    second_stride: int = 1,
    final_pool: bool = True,
) -> NetworkSpec:
    """Five convolutions (3D until the slice axis collapses, then 2D), three
    fully connected layers, ReLU after everything except the final logits."""
    depth = input_shape[1]
    c1, c2, c3, c4, c5 = conv_channels
    fk, sk = first_kernel, second_kernel
    layers = [
        LayerSpec("conv3d", c1, kernel=(3, fk, fk), stride=(1, 2, 2), pad=(1, 0, 0)),
        LayerSpec("relu"),
        LayerSpec("maxpool2x2"),
        LayerSpec("conv3d", c2, kernel=(3, sk, sk), stride=(1, second_stride, second_stride), pad=(1, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("maxpool2x2"),
        LayerSpec("conv3d", c3, kernel=(3, 3, 3), stride=(1, 1, 1), pad=(1, 1, 1)),
        LayerSpec("relu"),
        # kernel depth = remaining slice count, no depth padding: collapses slices
        LayerSpec("conv3d", c4, kernel=(depth, 3, 3), stride=(1, 1, 1), pad=(0, 1, 1)),
        LayerSpec("relu"),
        LayerSpec("conv2d", c5, kernel=(1, 3, 3), stride=(1, 1, 1), pad=(0, 1, 1)),
        LayerSpec("relu"),
    ]
    if final_pool:
        layers.append(LayerSpec("maxpool2x2"))
    layers += [
        LayerSpec("fully_connected", width=fc_widths[0]),
        LayerSpec("relu"),
        LayerSpec("fully_connected", width=fc_widths[1]),
        LayerSpec("relu"),
        LayerSpec("fully_connected", width=n_classes),
    ]
    spec = NetworkSpec(input_shape=input_shape, layers=tuple(layers))
    chain = spec.shape_chain()
    conv_out = [s for ls, s in zip(spec.layers, chain[1:]) if ls.kind.startswith("conv")]
    if conv_out[3][1] != 1:
        raise ShapeError(f"slice axis should collapse to 1 after the fourth conv, got {conv_out[3][1]}")
    return spec


def siamese_spec(input_hws: tuple[int, int, int], mode: str = "reduced") -> NetworkSpec:
    """VB network: 7-way level head on top of the embedding."""
    h, w, s = input_hws
    if mode == "paper":
        return backbone_spec((1, s, h, w), 7, PAPER_CHANNELS, PAPER_FC,
                             first_kernel=7, second_kernel=5, second_stride=2)
    return backbone_spec((1, s, h, w), 7, REDUCED_CHANNELS, REDUCED_FC,
                         first_kernel=5, final_pool=False)


def classifier_spec(input_hws: tuple[int, int, int], n_classes: int = 4, mode: str = "reduced") -> NetworkSpec:
    """Disc-grading network: same conv stack, fan-in recomputed for the
    (narrower) disc canvas, fresh FC widths from the same table."""
    h, w, s = input_hws
    if mode == "paper":
        return backbone_spec((1, s, h, w), n_classes, PAPER_CHANNELS, PAPER_FC,
                             first_kernel=7, second_kernel=5, second_stride=2)
    return backbone_spec((1, s, h, w), n_classes, REDUCED_CHANNELS, REDUCED_FC,
                         first_kernel=5, final_pool=False)
