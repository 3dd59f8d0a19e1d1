"""Federated client unlearning by distilling from an edited copy of the global model."""

from .data import (Dataset, FederationData, LabeledExample, PartitionSpec, build_federation,
                   forget_retain_split, generate_blobs, load_csv, partition)
from .errors import ConfigError, DomainError, ParseError, ShapeError
from .evaluation import (MetricsReport, MIAPredictor, accuracy, avg_train_loss, fit_mia_song,
                         fit_mia_yeom, mia_rate, report)
from .federation import (FederationConfig, FederationState, RoundReport, aggregate,
                         local_train, recover, run_fedavg, unlearning_round)
from .nn import (Adam, MLPArchitecture, ParameterSet, SGD, backprop, cross_entropy, forward,
                 init_params, kl_divergence, softmax)
from .unlearning import (TeacherVariant, UnlearnConfig, centralized_fedquit, fedquit_unlearn,
                         incompetent_teacher, modify_outputs_logits, modify_outputs_softmax,
                         natural_baseline, teacher_targets)

__version__ = "0.1.0"
