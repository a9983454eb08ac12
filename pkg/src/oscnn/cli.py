"""Command-line entry point: ``oscnn <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import data, evaluation, fusion, images, serialize, streams
from .config import ConfigError, RunConfig, StreamDecl, load_config
from .optim import DivergenceError

logger = logging.getLogger("oscnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
LOG_HEADER = "iter,lr_head,lr_hidden,loss"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def format_log_line(it: int, lr_head: float, lr_hidden: float, loss: float) -> str:
    # 12 significant digits drop float noise from lr products (1e-4 * 1e-2)
    return f"{it},{lr_head:.12g},{lr_hidden:.12g},{loss!r}"


class LossLog:
    def __init__(self, path: Path):
        self.fh = open(path, "w", encoding="utf-8", newline="\n")
        self.fh.write(LOG_HEADER + "\n")

    def __call__(self, it, lr_head, lr_hidden, loss):
        self.fh.write(format_log_line(it, lr_head, lr_hidden, float(loss)) + "\n")

    def close(self):
        self.fh.close()


# --- helpers -----------------------------------------------------------------

def _guard_output(path: Path, force: bool, what: str = "model") -> None:
    """Refuse to clobber outputs; a half-written model means an interrupted run."""
    if not path.exists() or force:
        return
    if what == "model":
        try:
            serialize.load_model(path)
        except serialize.ModelFormatError:
            raise UsageError(f"{path} is a partial or corrupt model file; resuming is not supported "
                             "(rerun with --force to start over)") from None
    raise UsageError(f"{path} already exists (use --force to overwrite)")


def _selected(cfg: RunConfig, label: Optional[str]) -> List[StreamDecl]:
    if not cfg.streams:
        raise ConfigError("config declares no [stream ...] sections")
    if label is None:
        return list(cfg.streams)
    return [cfg.stream(label)]


def _load(path: Path, split: str = "development") -> data.Manifest:
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    return data.load_manifest(path, split)


def _model_paths(cfg: RunConfig, label: str):
    out = cfg.require_output()
    return (out / "models" / f"{label}.pretrained.oscn", out / "models" / f"{label}.oscn",
            out / "logs", out / "scores" / f"{label}.csv")


def _train_manifest(cfg: RunConfig) -> data.Manifest:
    dev = _load(cfg.path("development"), "development")
    if "validation" in cfg.data:
        return data.merge_splits(dev, _load(cfg.path("validation"), "validation"))
    return dev


# --- subcommands -------------------------------------------------------------

def cmd_gen_toy(args, cfg: RunConfig) -> int:
    toy = cfg.toy
    if "out_dir" not in toy:
        raise ConfigError("[toy] out_dir is required")
    out = Path(toy["out_dir"])
    seed = args.seed if args.seed is not None else int(toy.get("seed", "0"))
    if not args.force and any((out / f).exists() for f in data.MANIFEST_FILES.values()):
        raise UsageError(f"toy corpus already present in {out} (use --force to regenerate)")
    proxy = toy.get("proxy_count")
    corpus = data.make_toy_dataset(seed, int(toy.get("per_class", "60")), int(toy.get("class_count", "8")),
                                   out, toy.get("mode", "mixed"), int(proxy) if proxy else None)
    print(f"wrote {len(corpus.development)}/{len(corpus.validation)}/{len(corpus.evaluation)} "
          f"event images and {len(corpus.object_proxy)} proxy images to {out}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    decls = _selected(cfg, args.stream)
    if cfg.pretrain is None:
        raise ConfigError("[pretrain] section is required")
    seed = args.seed if args.seed is not None else cfg.seed("pretrain")
    jobs = []
    for decl in decls:
        proxy = _load(cfg.path(f"{decl.id.axis}_proxy"))
        axis = streams.proxy_axis(proxy)
        if axis is not None and axis != decl.id.axis:
            raise ConfigError(f"{decl.id.label}: {decl.id.axis}_proxy manifest labels the {axis} cue")
        pre_path, _, log_dir, _ = _model_paths(cfg, decl.id.label)
        _guard_output(pre_path, args.force)
        jobs.append((decl, proxy, pre_path, log_dir))
    for decl, proxy, pre_path, log_dir in jobs:
        pre_path.parent.mkdir(parents=True, exist_ok=True)
        log_dir.mkdir(parents=True, exist_ok=True)
        log = LossLog(log_dir / f"{decl.id.label}.pretrain.log")
        try:
            model = streams.pretrain_proxy(decl.id, decl.flavor, proxy, cfg.pretrain, seed,
                                           crop_size=decl.crop_size, log=log)
        finally:
            log.close()
        serialize.save_model(model, pre_path)
        print(f"{decl.id.label}: pretrained -> {pre_path}")
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    decls = _selected(cfg, args.stream)
    if cfg.finetune is None:
        raise ConfigError("[finetune] section is required")
    seed = args.seed if args.seed is not None else cfg.seed("finetune")
    train = _train_manifest(cfg)
    jobs = []
    for decl in decls:
        pre_path, out_path, log_dir, _ = _model_paths(cfg, decl.id.label)
        if not pre_path.exists():
            raise UsageError(f"{decl.id.label}: pretrained model {pre_path} missing; run pretrain first")
        model = serialize.load_model(pre_path, expect=decl.id)
        _guard_output(out_path, args.force)
        jobs.append((decl, model, out_path, log_dir))
    for decl, model, out_path, log_dir in jobs:
        log_dir.mkdir(parents=True, exist_ok=True)
        log = LossLog(log_dir / f"{decl.id.label}.finetune.log")
        try:
            tuned = streams.finetune(model, train, cfg.finetune, seed, log=log)
        finally:
            log.close()
        serialize.save_model(tuned, out_path)
        print(f"{decl.id.label}: fine-tuned on {len(train)} images -> {out_path}")
    return EXIT_OK


def cmd_score(args, cfg: Optional[RunConfig]) -> int:
    workers = args.workers or (cfg.score_workers if cfg else 1)
    if args.model:
        if not (args.manifest and args.out):
            raise UsageError("--model needs --manifest and --out")
        jobs = [(Path(args.model), Path(args.manifest), Path(args.out))]
    else:
        if cfg is None:
            raise UsageError("score needs --config or --model/--manifest/--out")
        manifest_path = Path(args.manifest) if args.manifest else cfg.path("evaluation")
        jobs = []
        for decl in _selected(cfg, args.stream):
            _, model_path, _, score_path = _model_paths(cfg, decl.id.label)
            jobs.append((model_path, manifest_path, score_path))
    for model_path, manifest_path, score_path in jobs:
        _guard_output(score_path, args.force, "scores")
        model = serialize.load_model(model_path)
        manifest = _load(manifest_path, "evaluation")
        if manifest.class_names != model.class_names:
            raise DataError(f"{manifest_path}: classes differ from the model head of {model_path}")
        scores = streams.score_dataset(model, manifest, workers=workers)
        score_path.parent.mkdir(parents=True, exist_ok=True)
        fusion.save_scores(scores, score_path)
        print(f"{model.id.label}: scored {len(manifest)} images -> {score_path}")
    return EXIT_OK


def _labels_from_files(paths: List[Path]) -> List[str]:
    return [p.name[: -len(".csv")] if p.name.endswith(".csv") else p.stem for p in paths]


def cmd_fuse(args, cfg: Optional[RunConfig]) -> int:
    paths = [Path(p) for p in args.scores]
    labels = _labels_from_files(paths)
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise UsageError(f"bad --weights {args.weights!r}") from None
        if len(weights) != len(paths):
            raise UsageError(f"{len(weights)} weights for {len(paths)} score files")
        spec = fusion.FusionSpec(tuple(zip(labels, weights)))
    elif args.depth_ensemble:
        if len(paths) != 2:
            raise UsageError("--depth-ensemble takes exactly two score files: deep, then very-deep")
        spec = fusion.depth_ensemble_spec(*labels)
    elif cfg is not None and cfg.fusion is not None:
        override = dict(cfg.fusion.components)
        missing = [l for l in labels if l not in override]
        if missing:
            raise ConfigError(f"[fusion] weights lack {missing}")
        spec = fusion.FusionSpec(tuple((l, override[l]) for l in labels))
    elif len(paths) == 1:
        spec = fusion.FusionSpec(((labels[0], 1.0),))
    else:
        try:
            spec = fusion.five_stream_spec(labels)
        except fusion.FusionError as exc:
            raise UsageError(f"{exc}; name score files by stream label or pass --weights") from None
    _guard_output(Path(args.out), args.force, "scores")
    fused = fusion.fuse(spec, [fusion.load_scores(p) for p in paths])
    fusion.save_scores(fused, args.out)
    print("fused " + ", ".join(f"{l}*{w!r}" for l, w in spec.components) + f" -> {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: Optional[RunConfig]) -> int:
    scores = fusion.load_scores(args.scores)
    if args.manifest:
        manifest = _load(Path(args.manifest), "evaluation")
    elif cfg is not None:
        manifest = _load(cfg.path("evaluation"), "evaluation")
    else:
        raise UsageError("eval needs --manifest or --config")
    if scores.ids != tuple(manifest.paths):
        first = next((i for i, (a, b) in enumerate(zip(scores.ids, manifest.paths)) if a != b),
                     min(len(scores.ids), len(manifest)))
        raise DataError(f"score rows do not follow the manifest (first mismatch at row {first})")
    if scores.class_names != manifest.class_names:
        raise DataError("score columns do not match the manifest classes")
    report = evaluation.mean_ap(scores.values, manifest.labels, manifest.class_names)
    text = report.to_text()
    if args.out:
        _guard_output(Path(args.out), args.force, "report")
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    if args.machine_out:
        _guard_output(Path(args.machine_out), args.force, "report")
        _write_text(Path(args.machine_out), report.to_machine_text())
    return EXIT_OK


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def filter_grid(weights: np.ndarray) -> np.ndarray:
    """Tile first-layer filters into one RGB image.

    Each filter is min-max scaled to 0..255 on its own (a flat filter maps to
    128); tiles run row-major on a ceil(sqrt(F)) square grid with one-pixel
    black separators.
    """
    f, c, kh, kw = weights.shape
    if c == 1:
        weights = np.repeat(weights, 3, axis=1)
    elif c != 3:
        weights = weights[:, :3] if c > 3 else np.concatenate(
            [weights, np.repeat(weights[:, -1:], 3 - c, axis=1)], axis=1)
    side = math.ceil(math.sqrt(f))
    grid = np.zeros((3, side * kh + side - 1, side * kw + side - 1), dtype=np.uint8)
    for k in range(f):
        w = weights[k].astype(np.float64)
        lo, hi = w.min(), w.max()
        tile = np.full(w.shape, 128.0) if hi == lo else (w - lo) / (hi - lo) * 255.0
        r, col = divmod(k, side)
        y, x = r * (kh + 1), col * (kw + 1)
        grid[:, y : y + kh, x : x + kw] = np.clip(np.rint(tile), 0, 255).astype(np.uint8)
    return grid


def first_conv_weights(model: streams.StreamModel) -> np.ndarray:
    for layer in model.spec.layers:
        if layer.kind in ("conv", "inception_block"):
            return model.params[layer.param_names()[0]][0]
    raise DataError("model has no convolution layer")


def cmd_viz_filters(args, cfg: Optional[RunConfig]) -> int:
    model = serialize.load_model(args.model)
    out = Path(args.out)
    _guard_output(out, args.force, "image")
    out.parent.mkdir(parents=True, exist_ok=True)
    images.write_ppm(out, filter_grid(first_conv_weights(model)))
    print(f"{model.id.label}: first-layer filters -> {out}")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oscnn", description="Object-scene CNN toy pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    common(sub.add_parser("gen-toy", help="materialize the synthetic corpus"))
    for name in ("pretrain", "finetune"):
        p = common(sub.add_parser(name, help=f"{name} the configured streams"))
        p.add_argument("--stream", help="only this stream label")

    p = common(sub.add_parser("score", help="ten-crop scoring of a manifest"), config_required=False)
    p.add_argument("--stream")
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=0)

    p = common(sub.add_parser("fuse", help="weighted late fusion of score files"), config_required=False)
    p.add_argument("scores", nargs="+")
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", help="comma-separated weights, one per score file")
    g.add_argument("--depth-ensemble", action="store_true", help="deep 0.3 / very-deep 0.6 weights")

    p = common(sub.add_parser("eval", help="per-class AP and mAP"), config_required=False)
    p.add_argument("scores")
    p.add_argument("--manifest")
    p.add_argument("--out", help="human-readable report path (default stdout)")
    p.add_argument("--machine-out", help="machine-readable report path")

    p = common(sub.add_parser("viz-filters", help="export first-layer filters as PPM"), config_required=False)
    p.add_argument("model")
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {
    "gen-toy": cmd_gen_toy,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "score": cmd_score,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "viz-filters": cmd_viz_filters,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, streams.StreamError) as exc:
        print(f"oscnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"oscnn {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, data.ManifestError, fusion.FusionError, serialize.ModelFormatError,
            serialize.StreamMismatchError, evaluation.UndefinedAPError, FileNotFoundError, OSError) as exc:
        print(f"oscnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
