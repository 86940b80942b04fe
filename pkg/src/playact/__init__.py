"""Weakly supervised localization of instrument-playing actions in video.

Three fully-convolutional streams (sound, object, action) are trained from
clip-level tags; the sound and object streams then supervise the action
stream, and the three outputs can be fused by pointwise product.
"""
from .datamodel import (ANCHOR_FPS, ActivationMap, BinaryMask, ClipTags, CorpusSampler,
                        InstrumentVocabulary, KeyPointAnnotationSet, SoundActivation, SubClip,
                        VideoClip, split_subclips)
from .estimators import ActionModel, ObjectModel, SoundModel
from .evaluation import EvalReport, evaluate, mann_whitney_auc, spatial_distance, temporal_auc
from .exceptions import PlayactError
from .features import FlowStackExtractor, LogMelExtractor, extract_flow_stack, extract_mel_3scale
from .fusion import fuse
from .models import SoundNetConfig, VisualNetConfig, init_params
from .supervision import TargetSpec, build_target
from .training import TrainSchedule, select_best_epoch, train_model

__version__ = "0.1.0"

__all__ = [
    "ANCHOR_FPS", "ActivationMap", "BinaryMask", "ClipTags", "CorpusSampler",
    "InstrumentVocabulary", "KeyPointAnnotationSet", "SoundActivation", "SubClip", "VideoClip",
    "split_subclips", "ActionModel", "ObjectModel", "SoundModel", "EvalReport", "evaluate",
    "mann_whitney_auc", "spatial_distance", "temporal_auc", "PlayactError",
    "FlowStackExtractor", "LogMelExtractor", "extract_flow_stack", "extract_mel_3scale", "fuse",
    "SoundNetConfig", "VisualNetConfig", "init_params", "TargetSpec", "build_target",
    "TrainSchedule", "select_best_epoch", "train_model",
]
