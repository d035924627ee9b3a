"""Patient-trial eligibility matching over coded records and criteria text.

Two encoding branches share nothing but the token embedding space: a
convolutional encoder for criterion sentences and a slotted dynamic
memory for longitudinal patient records. A matcher attends over the
memory with the sentence embedding and classifies the pair as
match / mismatch / unknown.
"""

from .ec_parser import (
    EXCLUSION,
    INCLUSION,
    Criterion,
    Trial,
    build_trial,
    format_eligibility,
    load_trials,
    parse_eligibility,
    save_trials,
)
from .errors import TrialMatchError
from .estimator import CriteriaMatcher
from .evaluation import (
    aggregate_trial,
    auprc_score,
    auroc_score,
    build_report,
    criteria_metrics,
    pca_project,
    stratified_report,
)
from .matcher import CLASSES
from .memory import SLOT_ORDER, Demographics, Patient, Visit, load_patients, save_patients
from .model import ModelDims, forward_pair, init_params
from .persistence import load_model, save_model
from .synthdata import SynthConfig, generate, oracle_match, write_synth_files
from .taxonomy import CODE_TYPES, Taxonomy, TaxonomyNode, load_taxonomy, save_taxonomy
from .text_encoding import (
    FeatureHashEncoder,
    PrecomputedEncoder,
    concept_embedding,
    make_encoder,
    read_embedding_file,
    tokenize,
    write_embedding_file,
)
from .training import (
    Dataset,
    LabeledPair,
    TrainConfig,
    grad_check,
    make_dataset,
    prepare_data,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CLASSES",
    "CODE_TYPES",
    "Criterion",
    "CriteriaMatcher",
    "Dataset",
    "Demographics",
    "EXCLUSION",
    "FeatureHashEncoder",
    "INCLUSION",
    "LabeledPair",
    "ModelDims",
    "Patient",
    "PrecomputedEncoder",
    "SLOT_ORDER",
    "SynthConfig",
    "Taxonomy",
    "TaxonomyNode",
    "TrainConfig",
    "Trial",
    "TrialMatchError",
    "Visit",
    "aggregate_trial",
    "auprc_score",
    "auroc_score",
    "build_report",
    "build_trial",
    "concept_embedding",
    "criteria_metrics",
    "forward_pair",
    "format_eligibility",
    "generate",
    "grad_check",
    "init_params",
    "load_model",
    "load_patients",
    "load_taxonomy",
    "load_trials",
    "make_dataset",
    "make_encoder",
    "oracle_match",
    "parse_eligibility",
    "pca_project",
    "prepare_data",
    "read_embedding_file",
    "save_model",
    "save_patients",
    "save_taxonomy",
    "save_trials",
    "stratified_report",
    "tokenize",
    "train",
    "write_embedding_file",
    "write_synth_files",
]
