"""Layer specs, the sequential network container and the toy architecture presets.

A network is a pair of immutable values: a :class:`NetworkSpec` describing
the layer stack and a ``ParamSet`` (``dict`` of parameter name to
``(weights, bias)``).  ``forward`` returns a cache that ``backward`` consumes.
Inception blocks own three convolutions, stored under ``"<block>/1x1"``,
``"<block>/3x3"`` and ``"<block>/5x5"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, ShapeError

ParamSet = Dict[str, Tuple[np.ndarray, np.ndarray]]

KINDS = ("conv", "relu", "maxpool", "fully_connected", "dropout", "inception_block", "flatten")
PRESETS = ("deep_toy", "verydeep_toy", "verydeep_plain_toy")
HEAD_INIT_STD = 0.01
# presets rescale mean-subtracted 0..255 pixels to roughly unit spread
PRESET_INPUT_SCALE = 1.0 / 64.0
_BRANCHES = (("1x1", 1, 0), ("3x3", 3, 1), ("5x5", 5, 2))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    conv: Optional[ConvSpec] = None
    window: int = 0  # maxpool
    stride: int = 0  # maxpool
    units: int = 0  # fully_connected outputs
    drop_prob: float = 0.0  # dropout
    branches: Tuple[int, int, int] = (0, 0, 0)  # inception 1x1/3x3/5x5 widths
    lr_role: str = "hidden"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.lr_role not in ("hidden", "head"):
            raise ValueError(f"unknown lr_role {self.lr_role!r}")
        if self.kind == "dropout" and not 0.0 < self.drop_prob < 1.0:
            raise ValueError(f"dropout probability must lie in (0,1), got {self.drop_prob}")
        if self.kind == "conv" and self.conv is None:
            raise ValueError(f"conv layer {self.name!r} needs a ConvSpec")

    @property
    def parameterized(self) -> bool:
        return self.kind in ("conv", "fully_connected", "inception_block")

    def param_names(self) -> list[str]:
        if self.kind == "inception_block":
            return [f"{self.name}/{b}" for b, _, _ in _BRANCHES]
        return [self.name] if self.parameterized else []

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name, "lr_role": self.lr_role}
        if self.kind == "conv":
            c = self.conv
            d.update(out_channels=c.out_channels, in_channels=c.in_channels, kernel_h=c.kernel_h,
                     kernel_w=c.kernel_w, stride=c.stride, pad=c.pad)
        elif self.kind == "maxpool":
            d.update(window=self.window, stride=self.stride)
        elif self.kind == "fully_connected":
            d.update(units=self.units)
        elif self.kind == "dropout":
            d.update(drop_prob=self.drop_prob)
        elif self.kind == "inception_block":
            d.update(branches=list(self.branches))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        kind = d["kind"]
        kw = dict(kind=kind, name=d["name"], lr_role=d.get("lr_role", "hidden"))
        if kind == "conv":
            kw["conv"] = ConvSpec(d["out_channels"], d["in_channels"], d["kernel_h"], d["kernel_w"],
                                  d["stride"], d["pad"])
        elif kind == "maxpool":
            kw.update(window=d["window"], stride=d["stride"])
        elif kind == "fully_connected":
            kw["units"] = d["units"]
        elif kind == "dropout":
            kw["drop_prob"] = d["drop_prob"]
        elif kind == "inception_block":
            kw["branches"] = tuple(d["branches"])
        return cls(**kw)


def _layer_output_shape(layer: LayerSpec, shape: tuple) -> tuple:
    kind = layer.kind
    if kind in ("relu", "dropout"):
        return shape
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "fully_connected":
        if len(shape) != 1:
            raise ShapeError(f"{layer.name}: fully_connected needs a flat input, got {shape}")
        return (layer.units,)
    if len(shape) != 3:
        raise ShapeError(f"{layer.name}: expected a (C,H,W) input, got {shape}")
    c, h, w = shape
    if kind == "conv":
        if c != layer.conv.in_channels:
            raise ShapeError(f"{layer.name}: input has {c} channels, conv expects {layer.conv.in_channels}")
        return (layer.conv.out_channels, *layer.conv.output_hw(h, w))
    if kind == "maxpool":
        if layer.window > h or layer.window > w:
            raise ShapeError(f"{layer.name}: input {h}x{w} too small for pool window {layer.window}")
        return (c, (h - layer.window) // layer.stride + 1, (w - layer.window) // layer.stride + 1)
    if kind == "inception_block":
        return (sum(layer.branches), h, w)
    raise AssertionError(kind)


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, int, int]
    class_count: int
    input_scale: float = 1.0  # fixed multiplier applied to the batch before layer 1
    shapes: Tuple[tuple, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        shape = tuple(self.input_shape)
        shapes = []
        for layer in self.layers:
            shape = _layer_output_shape(layer, shape)
            shapes.append(shape)
        if shape != (self.class_count,):
            raise ShapeError(f"network outputs {shape}, expected ({self.class_count},)")
        param_layers = [l for l in self.layers if l.parameterized]
        heads = [i for i, l in enumerate(param_layers) if l.lr_role == "head"]
        if heads and heads != list(range(len(param_layers) - len(heads), len(param_layers))):
            raise ValueError("only the trailing parameterized layers may carry lr_role='head'")
        object.__setattr__(self, "shapes", tuple(shapes))

    def param_shapes(self) -> dict[str, tuple[tuple, tuple]]:
        out = {}
        shape = tuple(self.input_shape)
        for layer, out_shape in zip(self.layers, self.shapes):
            if layer.kind == "conv":
                out[layer.name] = (layer.conv.weight_shape, (layer.conv.out_channels,))
            elif layer.kind == "fully_connected":
                out[layer.name] = ((shape[0], layer.units), (layer.units,))
            elif layer.kind == "inception_block":
                for (suffix, k, _), width in zip(_BRANCHES, layer.branches):
                    out[f"{layer.name}/{suffix}"] = ((width, shape[0], k, k), (width,))
            shape = out_shape
        return out

    def lr_roles(self) -> dict[str, str]:
        return {n: l.lr_role for l in self.layers for n in l.param_names()}

    @property
    def head(self) -> LayerSpec:
        for layer in reversed(self.layers):
            if layer.kind == "fully_connected" and layer.lr_role == "head":
                return layer
        raise ValueError("network has no head layer")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "input_scale": self.input_scale,
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(LayerSpec.from_dict(x) for x in d["layers"]), tuple(d["input_shape"]),
                   d["class_count"], d.get("input_scale", 1.0))


def _he_init(shapes: dict, rng: np.random.Generator, dtype=T.DEFAULT_DTYPE) -> ParamSet:
    params = {}
    for name, (wshape, bshape) in shapes.items():
        fan_in = int(np.prod(wshape[1:])) if len(wshape) == 4 else wshape[0]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape).astype(dtype)
        params[name] = (w, np.zeros(bshape, dtype=dtype))
    return params


def init_params(spec: NetworkSpec, seed: int, dtype=T.DEFAULT_DTYPE) -> ParamSet:
    """Gaussian(0, sqrt(2/fan_in)) weights, zero biases; head at Gaussian(0, 0.01)."""
    rng = np.random.default_rng(seed)
    params = _he_init(spec.param_shapes(), rng, dtype)
    head = spec.head.name
    w, b = params[head]
    params[head] = (rng.normal(0.0, HEAD_INIT_STD, size=w.shape).astype(dtype), b)
    return params


def _conv(name, cin, cout, k, stride=1, pad=None):
    pad = k // 2 if pad is None else pad
    return LayerSpec("conv", name, conv=ConvSpec(cout, cin, k, k, stride, pad))


def _stage(i, cin, cout, k, stride=1):
    return [_conv(f"conv{i}", cin, cout, k, stride), LayerSpec("relu", f"relu{i}"),
            LayerSpec("maxpool", f"pool{i}", window=2, stride=2)]


def _preset_layers(flavor: str, c: int, class_count: int, drop_prob: float) -> list[LayerSpec]:
    if flavor == "deep_toy":
        layers = _stage(1, c, 16, 5, stride=2) + _stage(2, 16, 24, 3) + _stage(3, 24, 32, 3)
        layers += [
            LayerSpec("flatten", "flatten"),
            LayerSpec("fully_connected", "fc4", units=64),
            LayerSpec("relu", "relu4"),
            LayerSpec("dropout", "drop4", drop_prob=drop_prob),
            LayerSpec("fully_connected", "head", units=class_count, lr_role="head"),
        ]
    elif flavor == "verydeep_toy":
        layers = _stage(1, c, 16, 5, stride=2) + _stage(2, 16, 24, 3)
        layers += [
            LayerSpec("inception_block", "inc3", branches=(8, 16, 8)),
            LayerSpec("relu", "relu3"),
            LayerSpec("inception_block", "inc4", branches=(8, 16, 8)),
            LayerSpec("relu", "relu4"),
            LayerSpec("maxpool", "pool4", window=2, stride=2),
            LayerSpec("inception_block", "inc5", branches=(8, 16, 8)),
            LayerSpec("relu", "relu5"),
            LayerSpec("flatten", "flatten"),
            LayerSpec("dropout", "drop5", drop_prob=drop_prob),
            LayerSpec("fully_connected", "head", units=class_count, lr_role="head"),
        ]
    elif flavor == "verydeep_plain_toy":
        # stacked small kernels, in the manner of the 19-layer plain nets
        layers = [_conv("conv1a", c, 16, 3, stride=2), LayerSpec("relu", "relu1a"),
                  _conv("conv1b", 16, 16, 3), LayerSpec("relu", "relu1b"),
                  LayerSpec("maxpool", "pool1", window=2, stride=2)]
        cin = 16
        for i, cout in ((2, 24), (3, 32)):
            layers += [_conv(f"conv{i}a", cin, cout, 3), LayerSpec("relu", f"relu{i}a"),
                       _conv(f"conv{i}b", cout, cout, 3), LayerSpec("relu", f"relu{i}b"),
                       LayerSpec("maxpool", f"pool{i}", window=2, stride=2)]
            cin = cout
        layers += [
            LayerSpec("flatten", "flatten"),
            LayerSpec("fully_connected", "fc4", units=64),
            LayerSpec("relu", "relu4"),
            LayerSpec("dropout", "drop4", drop_prob=drop_prob),
            LayerSpec("fully_connected", "head", units=class_count, lr_role="head"),
        ]
    else:
        raise ValueError(f"unknown preset flavor {flavor!r}; choose from {PRESETS}")
    return layers


def build_preset(flavor: str, input_shape, class_count: int, seed: int,
                 drop_prob: float = 0.5) -> tuple[NetworkSpec, ParamSet]:
    """Build one of the toy architectures and initialize it from ``seed``.

    ``deep_toy`` is three conv/relu/pool stages, a hidden fully-connected
    layer and a head.  ``verydeep_toy`` is two conv stages followed by three
    inception blocks and a head.  ``verydeep_plain_toy`` stacks pairs of 3x3
    convolutions.
    """
    c, h, w = input_shape
    if min(h, w) < 16:
        raise ShapeError(f"input {h}x{w} too small for the pooling pyramid (need >= 16)")
    layers = _preset_layers(flavor, c, class_count, drop_prob)
    try:
        spec = NetworkSpec(tuple(layers), (c, h, w), class_count, PRESET_INPUT_SCALE)
    except ShapeError as exc:
        raise ShapeError(f"input {h}x{w} too small for the {flavor} pooling pyramid: {exc}") from exc
    return spec, init_params(spec, seed)


# --- forward / backward -----------------------------------------------------

def _inception_forward(layer, params, x):
    outs, caches = [], []
    for (suffix, k, pad), width in zip(_BRANCHES, layer.branches):
        w, b = params[f"{layer.name}/{suffix}"]
        spec = ConvSpec(width, x.shape[1], k, k, 1, pad)
        y, cache = T.conv2d_forward_cached(x, w, b, spec)
        outs.append(y)
        caches.append(cache)
    return np.concatenate(outs, axis=1), caches


def forward(spec: NetworkSpec, params: ParamSet, batch: np.ndarray, mode: str = "eval",
            rng: Optional[np.random.Generator] = None):
    """Run the network; returns ``(logits, cache)``.

    In ``train`` mode dropout uses inverted scaling and draws its masks from
    ``rng``; in ``eval`` mode dropout is the identity and ``rng`` is unused.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match network input {tuple(spec.input_shape)}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    x = batch * batch.dtype.type(spec.input_scale) if spec.input_scale != 1.0 else batch
    cache = []
    for layer in spec.layers:
        kind = layer.kind
        if kind == "conv":
            w, b = params[layer.name]
            x, c = T.conv2d_forward_cached(x, w, b, layer.conv)
        elif kind == "relu":
            c = x > 0
            x = x * c
        elif kind == "maxpool":
            x, c = T.maxpool_forward(x, layer.window, layer.stride)
        elif kind == "flatten":
            c = x.shape
            x = x.reshape(x.shape[0], -1)
        elif kind == "fully_connected":
            w, b = params[layer.name]
            c = x
            x = T.matmul(x, w) + b
        elif kind == "dropout":
            if mode == "train":
                keep = 1.0 - layer.drop_prob
                c = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
                x = x * c
            else:
                c = None
        elif kind == "inception_block":
            x, c = _inception_forward(layer, params, x)
        cache.append(c)
    return x, cache


def backward(spec: NetworkSpec, params: ParamSet, cache, grad_logits: np.ndarray) -> ParamSet:
    """Gradients of every parameter given ``d loss / d logits``."""
    if len(cache) != len(spec.layers):
        raise ShapeError("cache does not belong to this network")
    if grad_logits.shape[1:] != (spec.class_count,):
        raise ShapeError(f"grad_logits shape {grad_logits.shape}, expected (N, {spec.class_count})")
    grads: ParamSet = {}
    g = grad_logits
    for pos, layer, c in zip(range(len(cache) - 1, -1, -1), reversed(spec.layers), reversed(cache)):
        kind = layer.kind
        if kind == "conv":
            g, gw, gb = T.conv2d_backward(c, g, need_input_grad=pos > 0)
            grads[layer.name] = (gw, gb)
        elif kind == "relu":
            if c.shape != g.shape:
                raise ShapeError(f"stale cache at {layer.name}")
            g = g * c
        elif kind == "maxpool":
            g = T.maxpool_backward(c, g)
        elif kind == "flatten":
            g = g.reshape(c)
        elif kind == "fully_connected":
            w, _ = params[layer.name]
            gx, gw = T.matmul_backward(c, w, g)
            grads[layer.name] = (gw, g.sum(axis=0))
            g = gx
        elif kind == "dropout":
            if c is not None:
                g = g * c
        elif kind == "inception_block":
            gx = None
            start = 0
            for (suffix, _, _), width, bc in zip(_BRANCHES, layer.branches, c):
                dx, gw, gb = T.conv2d_backward(bc, np.ascontiguousarray(g[:, start : start + width]))
                grads[f"{layer.name}/{suffix}"] = (gw, gb)
                gx = dx if gx is None else gx + dx
                start += width
            g = gx
    return {name: grads[name] for name in params}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient ``(softmax - onehot) / N``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    loss = float(-log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(logits.dtype)


def replace_head(spec: NetworkSpec, params: ParamSet, new_class_count: int, seed: int):
    """Swap the classification head for a fresh ``new_class_count``-way layer.

    The new head is drawn from Gaussian(0, 0.01) with zero bias; every other
    parameter is carried over untouched.
    """
    head = spec.head
    layers = tuple(
        LayerSpec("fully_connected", l.name, units=new_class_count, lr_role="head") if l is head else l
        for l in spec.layers
    )
    new_spec = NetworkSpec(layers, spec.input_shape, new_class_count, spec.input_scale)
    in_dim = new_spec.param_shapes()[head.name][0][0]
    old_w, _ = params[head.name]
    rng = np.random.default_rng(seed)
    new_params = dict(params)
    new_params[head.name] = (
        rng.normal(0.0, HEAD_INIT_STD, size=(in_dim, new_class_count)).astype(old_w.dtype),
        np.zeros(new_class_count, dtype=old_w.dtype),
    )
    return new_spec, new_params


def parameterized_layer_count(spec: NetworkSpec) -> int:
    return sum(len(l.param_names()) for l in spec.layers)


def cast_params(params: ParamSet, dtype) -> ParamSet:
    return {k: (w.astype(dtype), b.astype(dtype)) for k, (w, b) in params.items()}
