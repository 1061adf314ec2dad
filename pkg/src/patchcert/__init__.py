"""Certified defense against adversarial patches.

Covering mask sets, double-masking defended inference with two-mask
certification, and worst-case cutout training strategies over a pluggable
classifier, plus brute-force oracles validating the whole pipeline.
"""

__version__ = "0.1.0"

from .cache import CachedClassifier, cached_predict
from .data import LabeledDataset, SynthSpec, generate_synth, load_cifar10_binary
from .defense import (
    CertificationResult,
    EvaluationReport,
    InferenceResult,
    certify,
    double_masking_infer,
    evaluate,
)
from .estimators import DoubleMaskingClassifier, MlpClassifier
from .masks import (
    MaskRect,
    MaskSet,
    NestingMap,
    apply_masks,
    build_mask_set,
    build_nesting_map,
    canonical_combo_key,
    load_mask_set,
    patch_side_from_fraction,
    save_mask_set,
    verify_r_covering,
)
from .models import (
    Classifier,
    MlpModel,
    cross_entropy,
    load_model,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_model,
)
from .oracle import (
    attack_simulate,
    build_patch_dictionary,
    covering_mutation_check,
    exhaustive_worst_pair,
)
from .strategies import (
    StrategyOutcome,
    grid_search,
    greedy_cutout,
    multisize_greedy,
    rand_cert,
    random_cutout,
    saliency_cutout,
)
from .training import TrainConfig, TrainResult, train

__all__ = [
    "CachedClassifier",
    "CertificationResult",
    "Classifier",
    "DoubleMaskingClassifier",
    "EvaluationReport",
    "InferenceResult",
    "LabeledDataset",
    "MaskRect",
    "MaskSet",
    "MlpClassifier",
    "MlpModel",
    "NestingMap",
    "StrategyOutcome",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
    "apply_masks",
    "attack_simulate",
    "build_mask_set",
    "build_nesting_map",
    "build_patch_dictionary",
    "cached_predict",
    "canonical_combo_key",
    "certify",
    "covering_mutation_check",
    "cross_entropy",
    "double_masking_infer",
    "evaluate",
    "exhaustive_worst_pair",
    "generate_synth",
    "greedy_cutout",
    "grid_search",
    "load_cifar10_binary",
    "load_mask_set",
    "load_model",
    "mlp_backward",
    "mlp_forward",
    "mlp_init",
    "multisize_greedy",
    "patch_side_from_fraction",
    "rand_cert",
    "random_cutout",
    "saliency_cutout",
    "save_mask_set",
    "save_model",
    "train",
    "verify_r_covering",
]
