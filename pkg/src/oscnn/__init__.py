"""Object-scene convolutional networks at desk scale.

Two families of CNN streams, one pretrained on object identity and one on
scene context, are fine-tuned to the same event classes, scored with
ten-crop voting and combined by weighted late fusion.  Everything runs on
numpy with a hand-written convolution/pooling/backprop core.
"""
from .data import Manifest, load_manifest, make_toy_dataset, merge_splits
from .evaluation import EvalReport, average_precision, mean_ap, pr_curve
from .fusion import FusionSpec, ScoreMatrix, depth_ensemble_spec, five_stream_spec, fuse, object_scene_spec
from .layers import NetworkSpec, build_preset
from .optim import TrainConfig, lr_at, sgd_step
from .serialize import load_model, save_model
from .streams import StreamId, StreamModel, finetune, pretrain_proxy, score_dataset, score_image

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "FusionSpec", "Manifest", "NetworkSpec", "ScoreMatrix", "StreamId", "StreamModel",
    "TrainConfig", "average_precision", "build_preset", "depth_ensemble_spec", "finetune",
    "five_stream_spec", "fuse", "load_manifest", "load_model", "lr_at", "make_toy_dataset", "mean_ap",
    "merge_splits", "object_scene_spec", "pr_curve", "pretrain_proxy", "save_model", "score_dataset",
    "score_image", "sgd_step",
]
