"""Stream lifecycle: proxy pretraining, fine-tuning and ten-crop scoring."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from . import layers as L
from .data import GLYPHS, BatchIterator, Manifest, background_name, channel_means, load_images
from .fusion import ScoreMatrix
from .images import normalize, random_crop_flip, read_ppm, resize_bilinear, ten_crop
from .optim import DivergenceError, OptimizerState, TrainConfig, lr_at, sgd_step

logger = logging.getLogger(__name__)

AXES = ("object", "scene")
DEPTHS = ("deep", "verydeep")
TOY_CANONICAL = 64
TOY_CROP = 56
FULL_CANONICAL = 256

LogFn = Callable[[int, float, float, float], None]


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class StreamId:
    axis: str
    depth: str
    variant: str = ""

    def __post_init__(self):
        if self.axis not in AXES:
            raise StreamError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.depth not in DEPTHS:
            raise StreamError(f"depth must be one of {DEPTHS}, got {self.depth!r}")
        if "-" in self.variant or "," in self.variant:
            raise StreamError("variant tag may not contain '-' or ','")

    @property
    def label(self) -> str:
        base = f"{self.axis}-{self.depth}"
        return f"{base}-{self.variant}" if self.variant else base

    @classmethod
    def parse(cls, label: str) -> "StreamId":
        parts = label.split("-", 2)
        if len(parts) < 2:
            raise StreamError(f"bad stream label {label!r}")
        return cls(parts[0], parts[1], parts[2] if len(parts) == 3 else "")


@dataclass(frozen=True)
class StreamModel:
    id: StreamId
    spec: L.NetworkSpec
    params: dict
    crop_size: int
    channel_means: Tuple[float, float, float]
    class_names: Tuple[str, ...]
    canonical_size: int = TOY_CANONICAL

    def __post_init__(self):
        object.__setattr__(self, "channel_means", tuple(float(m) for m in self.channel_means))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if tuple(self.spec.input_shape[1:]) != (self.crop_size, self.crop_size):
            raise StreamError(f"crop size {self.crop_size} does not match network input {self.spec.input_shape}")
        if self.crop_size > self.canonical_size:
            raise StreamError("crop size exceeds the canonical image size")
        if not all(np.isfinite(self.channel_means)):
            raise StreamError("channel means must be finite")
        if len(self.class_names) != self.spec.class_count:
            raise StreamError("class names do not match the head width")


def proxy_axis(manifest: Manifest) -> Optional[str]:
    """Which cue a proxy manifest labels, judged from its class names."""
    names = set(manifest.class_names)
    if names <= set(GLYPHS):
        return "object"
    if all(n == background_name(b) for b, n in enumerate(manifest.class_names)):
        return "scene"
    return None


def _prepare(manifest: Manifest, size: int) -> np.ndarray:
    imgs = load_images(manifest)
    if imgs.shape[2:] != (size, size):
        imgs = np.stack([resize_bilinear(im, size, size) for im in imgs])
    return imgs


def train_network(spec: L.NetworkSpec, params: L.ParamSet, images: np.ndarray, labels: np.ndarray,
                  crop_size: int, means, config: TrainConfig, seed: int,
                  log: Optional[LogFn] = None) -> L.ParamSet:
    """Mini-batch SGD on random crops and flips until ``config.stop_iteration``.

    Batches come from :class:`BatchIterator`; crops, flips and dropout masks
    share one generator.  All three are derived from ``seed``.
    """
    batches = iter(BatchIterator(len(images), config.batch_size, seed))
    rng = np.random.default_rng([seed, 1])
    state = OptimizerState.zeros_like(params)
    roles = spec.lr_roles()
    for it in range(config.stop_iteration):
        idx = next(batches)
        x = np.stack([normalize(random_crop_flip(images[i], crop_size, rng), means) for i in idx])
        logits, cache = L.forward(spec, params, x, "train", rng)
        loss, grad = L.softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise DivergenceError(it, "loss")
        grads = L.backward(spec, params, cache, grad)
        lr_head, lr_hidden = lr_at(config, it, "head"), lr_at(config, it, "hidden")
        params, state = sgd_step(params, grads, state, config, roles)
        if log is not None:
            log(it, lr_head, lr_hidden, loss)
    return params


def pretrain_proxy(stream: StreamId, flavor: str, proxy_manifest: Manifest, config: TrainConfig,
                   seed: int, crop_size: int = TOY_CROP, canonical_size: int = TOY_CANONICAL,
                   log: Optional[LogFn] = None) -> StreamModel:
    """Train a fresh network on the proxy task matching the stream's axis."""
    axis = proxy_axis(proxy_manifest)
    if axis is not None and axis != stream.axis:
        raise StreamError(f"{stream.label} cannot pretrain on a {axis}-proxy manifest")
    spec, params = L.build_preset(flavor, (3, crop_size, crop_size), proxy_manifest.class_count, seed)
    images = _prepare(proxy_manifest, canonical_size)
    means = channel_means(proxy_manifest)
    params = train_network(spec, params, images, proxy_manifest.labels, crop_size, means, config,
                           seed, log)
    return StreamModel(stream, spec, params, crop_size, means, proxy_manifest.class_names, canonical_size)


def finetune(model: StreamModel, event_manifest: Manifest, config: TrainConfig, seed: int,
             log: Optional[LogFn] = None) -> StreamModel:
    """Swap in an event-class head and train every layer with the layer-wise rates.

    The channel means learned with the pretrained network are kept.
    """
    spec, params = L.replace_head(model.spec, model.params, event_manifest.class_count, seed)
    images = _prepare(event_manifest, model.canonical_size)
    params = train_network(spec, params, images, event_manifest.labels, model.crop_size,
                           model.channel_means, config, seed, log)
    return replace(model, spec=spec, params=params, class_names=event_manifest.class_names)


def fresh_model(stream: StreamId, flavor: str, class_names, means, seed: int,
                crop_size: int = TOY_CROP, canonical_size: int = TOY_CANONICAL) -> StreamModel:
    """An untrained stream, as a no-pretraining baseline."""
    spec, params = L.build_preset(flavor, (3, crop_size, crop_size), len(class_names), seed)
    return StreamModel(stream, spec, params, crop_size, means, tuple(class_names), canonical_size)


def view_probabilities(model: StreamModel, img: np.ndarray) -> np.ndarray:
    """Softmax scores of the ten views, shape ``(10, C)``."""
    img = resize_bilinear(img, model.canonical_size, model.canonical_size)
    views = ten_crop(img, model.crop_size)
    batch = np.stack([normalize(v, model.channel_means) for v in views.views])
    logits, _ = L.forward(model.spec, model.params, batch, "eval")
    return L.softmax(logits.astype(np.float64))


def score_image(model: StreamModel, img: np.ndarray) -> np.ndarray:
    """Mean of the ten per-view probability vectors."""
    return view_probabilities(model, img).mean(axis=0)


def score_dataset(model: StreamModel, manifest: Manifest, workers: int = 1) -> ScoreMatrix:
    """Score every manifest entry; rows follow manifest order for any ``workers``."""

    def one(path):
        return score_image(model, read_ppm(manifest.resolve(path)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, manifest.paths))
    else:
        rows = [one(p) for p in manifest.paths]
    return ScoreMatrix(tuple(manifest.paths), model.class_names, np.stack(rows))
