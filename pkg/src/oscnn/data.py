"""Manifests, split handling, batching and the synthetic toy corpus.

Manifest files are plain text::

    classes:name_0,name_1,...
    relative/path.ppm,<class index>
    ...

Paths are resolved against the directory holding the manifest.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .images import read_ppm, write_ppm

SPLITS = ("development", "validation", "evaluation", "merged")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Manifest:
    class_names: Tuple[str, ...]
    entries: Tuple[Tuple[str, int], ...]
    split: str = "development"
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "entries", tuple((str(p), int(k)) for p, k in self.entries))
        object.__setattr__(self, "root", Path(self.root))
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split tag {self.split!r}")
        if len(self.class_names) < 2:
            raise ManifestError("a manifest needs at least two classes")
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            seen = set()
            dup = next(p for p in paths if p in seen or seen.add(p))
            raise ManifestError(f"duplicate path {dup!r}")
        c = len(self.class_names)
        for p, k in self.entries:
            if not 0 <= k < c:
                raise ManifestError(f"class index {k} for {p!r} outside [0, {c})")

    def __len__(self):
        return len(self.entries)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def paths(self) -> List[str]:
        return [p for p, _ in self.entries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([k for _, k in self.entries], dtype=np.int64)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def subset(self, indices: Sequence[int]) -> "Manifest":
        return replace(self, entries=tuple(self.entries[i] for i in indices))

    def to_text(self) -> str:
        lines = ["classes:" + ",".join(self.class_names)]
        lines += [f"{p},{k}" for p, k in self.entries]
        return "\n".join(lines) + "\n"


def parse_manifest(text: str, split: str = "development", root: Path = Path(".")) -> Manifest:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("classes:"):
        raise ManifestError("line 1: expected 'classes:' header")
    names = lines[0][len("classes:"):].split(",")
    if any(not n for n in names):
        raise ManifestError("line 1: empty class name")
    if len(names) < 2:
        raise ManifestError("line 1: a manifest needs at least two classes")
    entries, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2 or not parts[0]:
            raise ManifestError(f"line {lineno}: malformed entry {line!r}")
        path, label = parts
        try:
            k = int(label)
        except ValueError:
            raise ManifestError(f"line {lineno}: class index {label!r} is not an integer") from None
        if not 0 <= k < len(names):
            raise ManifestError(f"line {lineno}: unknown class index {k} (have {len(names)} classes)")
        if path in seen:
            raise ManifestError(f"line {lineno}: duplicate path {path!r}")
        seen.add(path)
        entries.append((path, k))
    if not entries:
        raise ManifestError("manifest lists no images")
    return Manifest(tuple(names), tuple(entries), split, root)


def load_manifest(path, split: str = "development") -> Manifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_manifest(text, split, path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_text())


def merge_splits(dev: Manifest, val: Manifest) -> Manifest:
    """Concatenate a development and validation split into one training split."""
    if dev.class_names != val.class_names:
        raise ManifestError("cannot merge manifests with different class names")
    if dev.root.resolve() == val.root.resolve():
        entries = dev.entries + val.entries
    else:
        # rebase validation paths onto the development root
        entries = dev.entries + tuple(
            (os.path.relpath(val.resolve(p), dev.root), k) for p, k in val.entries
        )
    return Manifest(dev.class_names, entries, "merged", dev.root)


def load_images(manifest: Manifest) -> np.ndarray:
    """All images of a manifest as one ``uint8`` array ``(N, 3, H, W)``."""
    imgs = [read_ppm(manifest.resolve(p)) for p in manifest.paths]
    return np.stack(imgs).astype(np.uint8)


def channel_means(manifest: Manifest) -> Tuple[float, float, float]:
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for p in manifest.paths:
        img = read_ppm(manifest.resolve(p))
        total += img.reshape(3, -1).sum(axis=1, dtype=np.float64)
        count += img.shape[1] * img.shape[2]
    if count == 0:
        raise ManifestError("cannot compute channel means of an empty manifest")
    return tuple(float(v) for v in total / count)


class BatchIterator:
    """Endless mini-batches drawn from per-epoch permutations.

    Each epoch visits every index exactly once; a batch may straddle an
    epoch boundary so every batch has exactly ``batch_size`` entries.
    """

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise ValueError("cannot batch an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed

    def epoch(self, e: int) -> np.ndarray:
        return np.random.default_rng([self.seed, e]).permutation(self.n)

    def __iter__(self) -> Iterator[np.ndarray]:
        buf = np.empty(0, dtype=np.int64)
        e = 0
        while True:
            while len(buf) < self.batch_size:
                buf = np.concatenate([buf, self.epoch(e)])
                e += 1
            yield buf[: self.batch_size]
            buf = buf[self.batch_size :]


# --- synthetic corpus --------------------------------------------------------

GLYPHS = ("triangle", "square", "disc", "cross")
TEXTURES = ("stripes", "gradient", "noise")
PALETTES = (
    ((200, 60, 40), (240, 200, 80)),
    ((30, 90, 160), (120, 200, 220)),
    ((40, 120, 50), (180, 220, 120)),
    ((110, 50, 130), (220, 150, 200)),
)
MODES = ("mixed", "object-only", "scene-only")
TOY_SIZE = 64


def background_name(b: int) -> str:
    return f"{TEXTURES[b % len(TEXTURES)]}{b // len(TEXTURES)}"


def _render_background(b: int, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    texture = b % len(TEXTURES)
    lo, hi = (np.array(c, dtype=np.float64) for c in PALETTES[(b // len(TEXTURES)) % len(PALETTES)])
    if texture == 0:
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4.0, 7.0)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
    elif texture == 1:
        theta = rng.uniform(0, 2 * np.pi)
        t = xx * np.cos(theta) + yy * np.sin(theta)
        t = (t - t.min()) / (t.max() - t.min())
    else:
        coarse = rng.random((9, 9))
        idx = np.minimum((np.arange(size) * 8) // size, 8)
        frac = (np.arange(size) * 8 / size) - idx
        rows = coarse[idx] * (1 - frac)[:, None] + coarse[np.minimum(idx + 1, 8)] * frac[:, None]
        t = rows[:, idx] * (1 - frac) + rows[:, np.minimum(idx + 1, 8)] * frac
    jitter = rng.normal(0, 12, size=3)
    img = lo[:, None, None] * (1 - t) + hi[:, None, None] * t + jitter[:, None, None]
    return img


def _glyph_mask(g: int, rng: np.random.Generator, size: int) -> np.ndarray:
    r = rng.uniform(10.0, 16.0)
    cy, cx = rng.uniform(r + 2, size - r - 2, size=2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    name = GLYPHS[g % len(GLYPHS)]
    if name == "disc":
        return dx * dx + dy * dy <= r * r
    if name == "square":
        return (np.abs(dx) <= 0.8 * r) & (np.abs(dy) <= 0.8 * r)
    if name == "triangle":
        return (dy <= 0.8 * r) & (dy >= -r) & (np.abs(dx) <= 0.6 * (dy + r))
    arm = r / 3
    return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))


def render_toy_image(glyph: Optional[int], background: Optional[int], rng: np.random.Generator,
                     size: int = TOY_SIZE) -> np.ndarray:
    """One synthetic image: a glyph (object cue) over a textured background (scene cue).

    ``background=None`` gives a flat grey field; ``glyph=None`` draws no glyph.
    The glyph colour is random and independent of the class, and every image
    gets pixel noise, so neither cue is readable from colour statistics alone.
    """
    if background is None:
        img = np.full((3, size, size), 128.0) + rng.normal(0, 12, size=3)[:, None, None]
    else:
        img = _render_background(background, rng, size)
    if glyph is not None:
        mask = _glyph_mask(glyph, rng, size)
        colour = rng.uniform(0, 60, 3) if rng.random() < 0.5 else rng.uniform(195, 255, 3)
        img = np.where(mask[None], colour[:, None, None], img)
    img = img + rng.normal(0, 10, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def event_class_cues(class_count: int) -> List[Tuple[int, int]]:
    """Class k is the pair (glyph k mod 4, background k div 4)."""
    return [(k % len(GLYPHS), k // len(GLYPHS)) for k in range(class_count)]


def event_class_names(class_count: int) -> List[str]:
    return [f"{GLYPHS[g]}-{background_name(b)}" for g, b in event_class_cues(class_count)]


@dataclass(frozen=True)
class ToyCorpus:
    development: Manifest
    validation: Manifest
    evaluation: Manifest
    object_proxy: Manifest
    scene_proxy: Manifest

    @property
    def train(self) -> Manifest:
        return merge_splits(self.development, self.validation)

    @property
    def test(self) -> Manifest:
        return self.evaluation


MANIFEST_FILES = {
    "development": "development.txt",
    "validation": "validation.txt",
    "evaluation": "evaluation.txt",
    "object_proxy": "object_proxy.txt",
    "scene_proxy": "scene_proxy.txt",
}
SPLIT_FRACTIONS = (0.5, 0.2)  # development, validation; evaluation gets the rest


def _split_counts(per_class: int) -> Tuple[int, int, int]:
    dev = int(round(per_class * SPLIT_FRACTIONS[0]))
    val = int(round(per_class * SPLIT_FRACTIONS[1]))
    return dev, val, per_class - dev - val


def make_toy_dataset(seed: int, per_class: int, class_count: int, out_dir, mode: str = "mixed",
                     proxy_count: Optional[int] = None, proxy_backgrounds: int = 6) -> ToyCorpus:
    """Materialize the synthetic event corpus plus both proxy labelings.

    Event class ``k`` combines glyph ``k % 4`` with background ``k // 4``, so
    with 8 classes every glyph appears on two backgrounds and every background
    carries four glyphs: a stream that reads only one cue confuses each class
    with its siblings.  The proxy images draw glyph and background
    independently; ``object_proxy`` labels them by glyph, ``scene_proxy`` by
    background.  ``mode`` "object-only" flattens event backgrounds to grey,
    "scene-only" omits event glyphs.  Splits are stratified 50/20/30.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if class_count < 2:
        raise ValueError("need at least two event classes")
    if min(_split_counts(per_class)) < 1:
        raise ValueError(f"per_class {per_class} leaves a split empty (need >= 4)")
    if proxy_count is not None and proxy_count < 1:
        raise ValueError("proxy_count must be positive")
    out = Path(out_dir)
    img_dir = out / "images"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    if not os.access(img_dir, os.W_OK):
        raise OSError(f"output directory {out} is not writable")

    rng = np.random.default_rng(seed)
    names = event_class_names(class_count)
    cues = event_class_cues(class_count)
    counts = _split_counts(per_class)
    splits = {"development": [], "validation": [], "evaluation": []}
    for k, (g, b) in enumerate(cues):
        for i in range(per_class):
            img = render_toy_image(None if mode == "scene-only" else g,
                                   None if mode == "object-only" else b, rng)
            split = "development" if i < counts[0] else "validation" if i < counts[0] + counts[1] else "evaluation"
            rel = f"images/event_{k:02d}_{i:04d}.ppm"
            write_ppm(out / rel, img)
            splits[split].append((rel, k))

    n_bg = max(proxy_backgrounds, max(b for _, b in cues) + 1)
    if proxy_count is None:
        proxy_count = per_class * class_count
    obj_entries, scene_entries = [], []
    for i in range(proxy_count):
        g = i % len(GLYPHS)
        b = int(rng.integers(0, n_bg))
        rel = f"images/proxy_{i:05d}.ppm"
        write_ppm(out / rel, render_toy_image(g, b, rng))
        obj_entries.append((rel, g))
        scene_entries.append((rel, b))

    corpus = ToyCorpus(
        development=Manifest(names, splits["development"], "development", out),
        validation=Manifest(names, splits["validation"], "validation", out),
        evaluation=Manifest(names, splits["evaluation"], "evaluation", out),
        object_proxy=Manifest(GLYPHS, obj_entries, "development", out),
        scene_proxy=Manifest([background_name(b) for b in range(n_bg)], scene_entries, "development", out),
    )
    for attr, fname in MANIFEST_FILES.items():
        save_manifest(getattr(corpus, attr), out / fname)
    return corpus


def load_toy_corpus(out_dir) -> ToyCorpus:
    out = Path(out_dir)
    tags = {"development": "development", "validation": "validation", "evaluation": "evaluation",
            "object_proxy": "development", "scene_proxy": "development"}
    return ToyCorpus(**{attr: load_manifest(out / fname, tags[attr]) for attr, fname in MANIFEST_FILES.items()})
