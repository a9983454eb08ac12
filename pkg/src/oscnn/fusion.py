"""Weighted late fusion of per-stream score matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

# object/scene axis weights (equal) and deep/very-deep weights
AXIS_WEIGHT = 0.5
DEPTH_WEIGHTS = {"deep": 0.3, "verydeep": 0.6}


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    ids: Tuple[str, ...]
    class_names: Tuple[str, ...]
    values: np.ndarray  # (N, C) float64

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.ids), len(self.class_names)):
            raise FusionError(f"values shape {values.shape} does not match "
                              f"{len(self.ids)} ids x {len(self.class_names)} classes")
        if not np.all(np.isfinite(values)):
            raise FusionError("score matrix contains non-finite values")

    def __eq__(self, other):
        if not isinstance(other, ScoreMatrix):
            return NotImplemented
        return (self.ids == other.ids and self.class_names == other.class_names
                and self.values.shape == other.values.shape and self.values.tobytes() == other.values.tobytes())

    __hash__ = None

    @property
    def shape(self):
        return self.values.shape

    def to_text(self) -> str:
        lines = [",".join(("id",) + self.class_names)]
        for i, row in zip(self.ids, self.values):
            lines.append(",".join([i] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScoreMatrix":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise FusionError("empty score file")
        header = lines[0].split(",")
        if header[0] != "id":
            raise FusionError("line 1: score file header must start with 'id'")
        ids, rows = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != len(header):
                raise FusionError(f"line {lineno}: expected {len(header)} fields, got {len(parts)}")
            ids.append(parts[0])
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise FusionError(f"line {lineno}: unparseable score") from None
        values = np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)
        return cls(tuple(ids), tuple(header[1:]), values)


def save_scores(scores: ScoreMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(scores.to_text())


def load_scores(path) -> ScoreMatrix:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return ScoreMatrix.from_text(fh.read())


@dataclass(frozen=True)
class FusionSpec:
    components: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        comps = tuple((str(label), float(w)) for label, w in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise FusionError("fusion needs at least one component")
        for label, w in comps:
            if not math.isfinite(w) or w < 0:
                raise FusionError(f"weight for {label!r} must be finite and >= 0, got {w}")
        if all(w == 0 for _, w in comps):
            raise FusionError("all fusion weights are zero")

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.components]

    @property
    def weights(self) -> List[float]:
        return [w for _, w in self.components]

    def scaled(self, factor: float) -> "FusionSpec":
        return FusionSpec(tuple((label, w * factor) for label, w in self.components))


def check_consistent(matrices: Sequence[ScoreMatrix]) -> None:
    first = matrices[0]
    for k, m in enumerate(matrices[1:], start=1):
        if m.class_names != first.class_names:
            raise FusionError(f"matrix {k}: class columns differ from matrix 0")
        if len(m.ids) != len(first.ids):
            raise FusionError(f"matrix {k}: {len(m.ids)} rows, matrix 0 has {len(first.ids)}")
        for row, (a, b) in enumerate(zip(first.ids, m.ids)):
            if a != b:
                raise FusionError(f"matrix {k}: row {row} id {b!r} differs from {a!r}")


def fuse(spec: FusionSpec, matrices: Sequence[ScoreMatrix]) -> ScoreMatrix:
    """Elementwise ``sum_i w_i * M_i``.  Weights are used verbatim (no renormalization)."""
    if len(matrices) != len(spec.components):
        raise FusionError(f"{len(matrices)} matrices for {len(spec.components)} fusion components")
    check_consistent(matrices)
    out = np.zeros_like(matrices[0].values)
    for w, m in zip(spec.weights, matrices):
        out += w * m.values
    return ScoreMatrix(matrices[0].ids, matrices[0].class_names, out)


def _parse_label(label: str) -> Tuple[str, str, str]:
    parts = label.split("-", 2)
    if len(parts) < 2 or parts[0] not in ("object", "scene") or parts[1] not in DEPTH_WEIGHTS:
        raise FusionError(f"cannot interpret stream label {label!r}")
    return parts[0], parts[1], parts[2] if len(parts) == 3 else ""


def depth_ensemble_spec(deep_label: str, verydeep_label: str) -> FusionSpec:
    return FusionSpec(((deep_label, DEPTH_WEIGHTS["deep"]), (verydeep_label, DEPTH_WEIGHTS["verydeep"])))


def object_scene_spec(object_label: str, scene_label: str) -> FusionSpec:
    return FusionSpec(((object_label, AXIS_WEIGHT), (scene_label, AXIS_WEIGHT)))


def five_stream_spec(labels: Iterable[str]) -> FusionSpec:
    """Flatten the axis-then-depth fusion over whatever streams are available.

    Within an axis the deep and very-deep scores are combined with the 0.3/0.6
    depth weights when both exist (a lone depth gets weight 1); several
    very-deep variants of one axis split the very-deep weight equally.  The
    two axes are then combined with equal weights (a lone axis gets 1).
    """
    labels = list(labels)
    if not labels:
        raise FusionError("no streams available")
    if len(set(labels)) != len(labels):
        raise FusionError("duplicate stream labels")
    groups: Dict[str, Dict[str, List[str]]] = {}
    for label in labels:
        axis, depth, _ = _parse_label(label)
        groups.setdefault(axis, {}).setdefault(depth, []).append(label)
    axis_w = AXIS_WEIGHT if len(groups) == 2 else 1.0
    weights = {}
    for axis, depths in groups.items():
        for depth, members in depths.items():
            depth_w = DEPTH_WEIGHTS[depth] if len(depths) == 2 else 1.0
            for label in members:
                weights[label] = axis_w * depth_w / len(members)
    return FusionSpec(tuple((label, weights[label]) for label in labels))
