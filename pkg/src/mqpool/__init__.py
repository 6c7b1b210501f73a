"""Masked temporal pooling operators with verified gradients.

Max, average, statistics, and multi-query multi-head attentive pooling over
padded frame sequences, a tape-based reverse-mode gradient path with a
finite-difference checker, a small gradual-unfreezing training harness, and
attention-analysis tools. See the command line entry point `mqpool` for the
end-to-end workflows.
"""

from .analysis import (
    AttentionDump,
    AttentionEntry,
    ConcentrationReport,
    CorrelationReport,
    SalienceReport,
    cumulative_mass,
    energy_correlation,
    export_heatmap,
    load_dump,
    phoneme_salience,
    save_dump,
)
from .core import SequenceBatch, Tensor, seeded_rng, tensor_read, tensor_write
from .errors import MqpoolError
from .gradcheck import GradReport, finite_diff_check, standard_suite
from .modeling import (
    FocalLossConfig,
    FusionClassifier,
    FusionModel,
    ToyEncoder,
    alpha_from_frequencies,
    focal_loss,
    macro_f1,
)
from .pooling import (
    NAMED_VARIANTS,
    PooledOutput,
    PoolingConfig,
    PoolKind,
    attention_weights,
    attentive_config,
    named_config,
    pool_average,
    pool_max,
    pool_mqmha,
    pool_statistics,
    score_frames,
)
from .training import (
    LabeledDataset,
    PhaseSpec,
    TrainingLog,
    UnfreezeSchedule,
    balanced_dev_split,
    load_dataset,
    lr_at,
    run_protocol,
    save_dataset,
    subsample_majority,
    synth_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionDump",
    "AttentionEntry",
    "ConcentrationReport",
    "CorrelationReport",
    "FocalLossConfig",
    "FusionClassifier",
    "FusionModel",
    "GradReport",
    "LabeledDataset",
    "MqpoolError",
    "NAMED_VARIANTS",
    "PhaseSpec",
    "PooledOutput",
    "PoolingConfig",
    "PoolKind",
    "SalienceReport",
    "SequenceBatch",
    "Tensor",
    "ToyEncoder",
    "TrainingLog",
    "UnfreezeSchedule",
    "alpha_from_frequencies",
    "attention_weights",
    "attentive_config",
    "balanced_dev_split",
    "cumulative_mass",
    "energy_correlation",
    "export_heatmap",
    "finite_diff_check",
    "focal_loss",
    "load_dataset",
    "load_dump",
    "lr_at",
    "macro_f1",
    "named_config",
    "phoneme_salience",
    "pool_average",
    "pool_max",
    "pool_mqmha",
    "pool_statistics",
    "run_protocol",
    "save_dataset",
    "save_dump",
    "score_frames",
    "seeded_rng",
    "standard_suite",
    "subsample_majority",
    "synth_dataset",
    "tensor_write",
    "tensor_read",
    "__version__",
]
