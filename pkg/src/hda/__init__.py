"""Domain adaptation via adversarial translation of the source domain.

The package trains a domain discriminator between source and target, walks
source samples across its decision boundary with iterated targeted FGSM, and
feeds the translated domain to standard distance-based adaptation methods
(source-only, DANN, MMD), alongside an untouched control arm.
"""

from .adaptation import (DAConfig, EvalReport, PipelineResult, PretrainConfig,
                         SourceClassifier, VariantResult, adapt, evaluate,
                         hda_pipeline, load_source_classifier,
                         median_heuristic_bandwidths, mmd2, mmd2_grad,
                         new_source_classifier, pretrain,
                         save_source_classifier)
from .attack import (AttackConfig, attack_success_rate, fgsm_step,
                     generate_adversarial_domain)
from .datasets import (BatchIterator, LabeledDataset, ShiftSpec, apply_shift,
                       dataset_from_idx, gen_gaussian_blobs, gen_two_moons,
                       load_dataset, load_idx, save_dataset, save_idx_images,
                       save_idx_labels, subset)
from .divergence import (DivergenceReport, HdhConfig, domain_error,
                         estimate_divergence, proxy_a_distance,
                         train_domain_classifier)
from .engine import (AdamState, ForwardCache, Gradients, Layer, Mlp,
                     adam_init, adam_step, backward, forward, grad_reversal,
                     load_mlp, mlp_parameters, new_mlp, save_mlp,
                     softmax_cross_entropy)
from .errors import (ConfigurationError, ConfigValidationError, FormatError,
                     HdaError, InputError, UsageError)
from .runner import (BenchmarkSpec, ExperimentConfig, RunRecord, RunReport,
                     config_from_dict, config_to_dict, emit_table,
                     load_config, load_run_report, run_experiment, run_single)

__version__ = "0.1.0"
