import contextlib
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from oscnn import cli

REPO = Path(__file__).resolve().parent.parent
TOY_CONFIG = REPO / "configs" / "toy.ini"
STREAMS = ("object-deep", "object-verydeep", "scene-deep", "scene-verydeep")
FUSIONS = {
    "object-scene-deep": (["object-deep", "scene-deep"], []),
    "object-scene-verydeep": (["object-verydeep", "scene-verydeep"], []),
    "depth-object": (["object-deep", "object-verydeep"], ["--depth-ensemble"]),
    "depth-scene": (["scene-deep", "scene-verydeep"], ["--depth-ensemble"]),
    "all-four": (list(STREAMS), []),
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_model():
    """Factory for untrained stream models (no disk, no training)."""
    from oscnn import layers as L
    from oscnn.streams import StreamId, StreamModel

    def make(label="object-deep", flavor="deep_toy", crop=24, classes=("a", "b", "c"), seed=0,
             means=(120.0, 110.5, 100.25)):
        spec, params = L.build_preset(flavor, (3, crop, crop), len(classes), seed)
        return StreamModel(StreamId.parse(label), spec, params, crop, means, classes, canonical_size=crop + 8)

    return make


def run_cli(*args):
    code = cli.main([str(a) for a in args])
    assert code == 0, f"oscnn {' '.join(map(str, args))} exited with {code}"


def run_pipeline(root: Path) -> Path:
    """gen-toy -> pretrain -> finetune -> score -> fuse -> eval with the reference config.

    Returns the run directory (``root/runs/toy``).
    """
    (root / "configs").mkdir(parents=True)
    cfg = root / "configs" / "toy.ini"
    shutil.copy(TOY_CONFIG, cfg)
    for command in ("gen-toy", "pretrain", "finetune", "score"):
        run_cli(command, "--config", cfg)
    run = root / "runs" / "toy"
    fused = run / "fused"
    reports = run / "reports"
    fused.mkdir()
    reports.mkdir()
    for name, (members, flags) in FUSIONS.items():
        run_cli("fuse", *[run / "scores" / f"{m}.csv" for m in members], "--out", fused / f"{name}.csv", *flags)
    manifest = run / "corpus" / "evaluation.txt"
    score_files = {s: run / "scores" / f"{s}.csv" for s in STREAMS}
    score_files.update({f: fused / f"{f}.csv" for f in FUSIONS})
    for name, path in score_files.items():
        run_cli("eval", path, "--manifest", manifest, "--out", reports / f"{name}.txt",
                "--machine-out", reports / f"{name}.csv")
    return run


class PipelineRun:
    def __init__(self, run: Path, seconds: float):
        self.dir = run
        self.seconds = seconds

    def report(self, name):
        from oscnn.evaluation import EvalReport

        return EvalReport.from_machine_text((self.dir / "reports" / f"{name}.csv").read_text())

    def mean_ap(self, name) -> float:
        return self.report(name).mean_ap

    def model(self, label, stage="finetuned") -> Path:
        suffix = ".pretrained.oscn" if stage == "pretrained" else ".oscn"
        return self.dir / "models" / f"{label}{suffix}"

    def artifacts(self):
        """Every model, score and report file, keyed by path relative to the run."""
        out = {}
        for sub in ("models", "scores", "fused", "reports"):
            for p in sorted((self.dir / sub).iterdir()):
                out[f"{sub}/{p.name}"] = p.read_bytes()
        return out


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """The reference toy pipeline, run once per session (a few minutes)."""
    t0 = time.perf_counter()
    run = run_pipeline(tmp_path_factory.mktemp("toy_run"))
    return PipelineRun(run, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def toy_run_repeat(tmp_path_factory):
    t0 = time.perf_counter()
    run = run_pipeline(tmp_path_factory.mktemp("toy_run_repeat"))
    return PipelineRun(run, time.perf_counter() - t0)


# --- acceptance bookkeeping ------------------------------------------------

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the end-of-run summary."""

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        try:
            yield notes.append
        except BaseException:
            _CRITERIA.append((number, title, False, notes))
            raise
        _CRITERIA.append((number, title, True, notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, notes in sorted(_CRITERIA, key=lambda c: c[0]):
        detail = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}{detail}")
