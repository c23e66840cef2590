"""Structured DNN pruning by magnitude, relevance, and their weighted
combination, plus an analytic split-learning time/bandwidth model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, SoftmaxCrossEntropyHead
from .models import build_cnn
from .network import Network
from .pruning import (
    PrunePlan,
    ScoreTable,
    apply_plan,
    build_score_table,
    combine,
    magnitude_scores,
    normalize,
    plan_prune,
)
from .relevance import (
    RelevanceRecord,
    conv_parameter_relevance,
    parameter_relevance,
    propagate_relevance,
    seed_output_relevance,
)
from .splitsim import (
    ComputeModel,
    EpochTimeBreakdown,
    LinkModel,
    cut_payload,
    epoch_time,
    time_to_accuracy,
)
from .training import (
    Dataset,
    SynthSpec,
    TrainConfig,
    adam_step,
    evaluate,
    load_idx,
    run_protocol,
    synth_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
