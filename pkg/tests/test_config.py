from pathlib import Path

import pytest

from oscnn.config import ConfigError, load_config, parse_schedule
from oscnn.optim import TrainConfig
from oscnn.streams import StreamId

REPO = Path(__file__).resolve().parent.parent


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_reference_config_loads():
    cfg = load_config(REPO / "configs" / "toy.ini")
    assert [d.id.label for d in cfg.streams] == ["object-deep", "object-verydeep", "scene-deep", "scene-verydeep"]
    assert [d.flavor for d in cfg.streams] == ["deep_toy", "verydeep_toy", "deep_toy", "verydeep_toy"]
    assert cfg.finetune.hidden_lr_multiplier == 0.01
    assert cfg.finetune.schedule == ((0, 0.01), (140, 0.001), (280, 0.0001))
    assert cfg.pretrain.stop_iteration == 600
    assert cfg.seeds == {"pretrain": 11, "finetune": 12}
    assert cfg.output_dir == REPO / "runs" / "toy"
    assert cfg.path("evaluation") == REPO / "runs" / "toy" / "corpus" / "evaluation.txt"
    assert cfg.fusion is None


@pytest.mark.parametrize("text, expected", [
    ("0:0.01, 1400:0.001, 2800:0.0001", ((0, 0.01), (1400, 0.001), (2800, 0.0001))),
    ("0:1e-2", ((0, 0.01),)),
    ("0:0.1,", ((0, 0.1),)),
])
def test_parse_schedule(text, expected):
    assert parse_schedule(text) == expected


@pytest.mark.parametrize("text", ["0-0.01", "a:0.1", "0:0.1:3"])
def test_parse_schedule_errors(text):
    with pytest.raises(ConfigError, match="schedule"):
        parse_schedule(text)


def test_train_section_overrides_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "[finetune]\nbatch_size = 8\nschedule = 0:0.5, 10:0.05\nstop_iteration = 20\n"))
    assert cfg.finetune == TrainConfig(batch_size=8, schedule=((0, 0.5), (10, 0.05)), stop_iteration=20)
    assert cfg.finetune.base_lr == 0.5
    assert cfg.pretrain is None


@pytest.mark.parametrize("text, message", [
    ("[finetune]\nlearning_rate = 0.1\n", "unknown key"),
    ("[finetune]\nbatch_size = 0\n", "finetune"),
    ("[mystery]\nx = 1\n", "unknown section"),
    ("[stream object-deep]\nflavor = resnet\n", "flavor"),
    ("[stream object-deep]\nflavor = deep_toy\n[stream object-deep ]\nflavor = deep_toy\n", "duplicate"),
    ("[fusion]\nweights = object-deep:-1\n", "weight"),
    ("[seeds]\npretrain = soon\n", "soon"),
    ("not an ini file\n", "run.ini"),
])
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write(tmp_path, text))


def test_bad_stream_label(tmp_path):
    with pytest.raises(ValueError, match="axis"):
        load_config(write(tmp_path, "[stream texture-deep]\nflavor = deep_toy\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_relative_paths_follow_config_dir(tmp_path):
    sub = tmp_path / "a" / "b"
    sub.mkdir(parents=True)
    cfg = load_config(write(sub, "[data]\nevaluation = ../eval.txt\nabsolute = /x/y.txt\n[output]\ndir = out\n"))
    assert cfg.path("evaluation") == tmp_path / "a" / "eval.txt"
    assert cfg.path("absolute") == Path("/x/y.txt")
    assert cfg.require_output() == sub / "out"


def test_missing_lookups_raise(tmp_path):
    cfg = load_config(write(tmp_path, "[seeds]\npretrain = 3\n"))
    assert cfg.seed("pretrain") == 3
    with pytest.raises(ConfigError, match="finetune"):
        cfg.seed("finetune")
    with pytest.raises(ConfigError, match="evaluation"):
        cfg.path("evaluation")
    with pytest.raises(ConfigError, match="output"):
        cfg.require_output()
    with pytest.raises(ConfigError, match="scene-deep"):
        cfg.stream("scene-deep")


def test_stream_sections(tmp_path):
    cfg = load_config(write(tmp_path, "[stream object-verydeep-plain]\nflavor = verydeep_plain_toy\ncrop_size = 24\n"))
    decl = cfg.stream("object-verydeep-plain")
    assert decl.id == StreamId("object", "verydeep", "plain")
    assert decl.crop_size == 24 and decl.flavor == "verydeep_plain_toy"


def test_fusion_override_and_workers(tmp_path):
    cfg = load_config(write(tmp_path, "[fusion]\nweights = object-deep:0.25, scene-deep:0.75\n[score]\nworkers = 3\n"))
    assert cfg.fusion.components == (("object-deep", 0.25), ("scene-deep", 0.75))
    assert cfg.score_workers == 3


def test_inline_comments(tmp_path):
    cfg = load_config(write(tmp_path, "[seeds]\npretrain = 5 ; chosen by dice\n"))
    assert cfg.seeds["pretrain"] == 5
