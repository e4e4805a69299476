"""Class-incremental learning with knowledge distillation and weight aligning."""

from .aligning import (NormKind, NormReport, align_weights, clip_weights_nonnegative, corrected_logits,
                       unit_norm_postprocess, weight_normalization_hook, weight_norms)
from .config import ExperimentConfig, parse_config, preset
from .driver import (ModelConfig, TrainConfig, VariationSpec, run_experiment, run_step,
                     snapshot_teacher)
from .errors import (ConfigError, DegenerateWeightsError, InvalidArgumentError, InvalidStateError,
                     ProtocolError)
from .losses import (LossConfig, combined_loss, cross_entropy_loss, distillation_loss, lambda_balance,
                     softmax_with_temperature)
from .memory import ExemplarMemory, herding_select, random_select, training_pool
from .metrics import StepMetrics, confusion_matrix, error_decomposition, summarize, topk_accuracy
from .model import ClassifierHead, InitSpec, Model, TaskSchedule, expand_head, logits, split_weights

__version__ = "0.1.0"
