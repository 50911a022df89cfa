"""Attention reallocation against gaslighting prompts in multimodal models.

Pipeline per layer: detect high-norm sink tokens, score heads by how much of
their attention lands on the image, select image-centric heads, and move part
of the attention they give to text sinks back onto the image.
"""

from .bench import GenParams, GaslightSample, EpisodeResult, generate_benchmark, run_episode
from .config import PRESETS, InterventionConfig, apply_preset
from .core import AttentionTensor, IndexSet, TokenContext, new_attention_tensor, row_mass
from .heads import HeadScores, HeadSelection, score_heads, select_visual_heads
from .metrics import BenchSummary, from_accuracies, summarize
from .realloc import ReallocParams, ReallocReport, apply_to_layer_stack, intervene_layer, reallocate
from .sinks import SinkCriterion, SinkPartition, detect_sinks
from .toy import ModelParams, ToyModel, forward
from .trace import TraceMetadata, read_trace, write_trace

__all__ = [
    "AttentionTensor", "BenchSummary", "EpisodeResult", "GaslightSample", "GenParams", "HeadScores",
    "HeadSelection", "IndexSet", "InterventionConfig", "ModelParams", "PRESETS", "ReallocParams",
    "ReallocReport", "SinkCriterion", "SinkPartition", "TokenContext", "ToyModel", "TraceMetadata",
    "apply_preset", "apply_to_layer_stack", "detect_sinks", "forward", "from_accuracies",
    "generate_benchmark", "intervene_layer", "new_attention_tensor", "read_trace", "reallocate",
    "row_mass", "run_episode", "score_heads", "select_visual_heads", "summarize", "write_trace",
]
