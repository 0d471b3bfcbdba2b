"""Membership inference against well-generalized classifiers.

The library trains small softmax networks, builds a reference ensemble of
shadow models, picks records that look vulnerable from the ensemble alone,
and tests membership either directly on the record or indirectly through
enhancing queries whose outputs the record influences.
"""

from .combine import CombinedResult, fisher_combine, kost_combine
from .datasets import (DataError, Dataset, Record, Schema, bootstrap_sample, generate_toy, load_csv,
                       make_cancer_like, make_split_plan, partition, write_csv)
from .direct import CdfModel, HypothesisResult, direct_attack, fit_cdf, query_attack
from .ensemble import (ContaminationError, Ensemble, build_positive_reference_models, build_reference_models,
                       load_ensemble, save_ensemble)
from .evaluation import (AttackReport, ProtocolConfig, aggregate, attack, prepare, precision_recall_curve,
                         run_protocol, sweep, toy_demonstration, write_report)
from .indirect import (IndirectParams, InfluenceScore, find_enhancing, indirect_attack, indirect_attack_many,
                       influence, optimize_enhancing, select_enhancing)
from .model import (ConfigurationError, DivergenceError, ModelParams, ModelSpec, TrainingConfig, predict, train,
                    update)
from .selection import SelectionParams, select_vulnerable

__all__ = [
    "AttackReport", "CdfModel", "CombinedResult", "ConfigurationError", "ContaminationError", "DataError",
    "Dataset", "DivergenceError", "Ensemble", "HypothesisResult", "IndirectParams", "InfluenceScore",
    "ModelParams", "ModelSpec", "ProtocolConfig", "Record", "Schema", "SelectionParams", "TrainingConfig",
    "aggregate", "attack", "bootstrap_sample", "build_positive_reference_models", "build_reference_models",
    "direct_attack", "find_enhancing", "fisher_combine", "fit_cdf", "generate_toy", "indirect_attack",
    "indirect_attack_many", "influence", "kost_combine", "load_csv", "load_ensemble", "make_cancer_like",
    "make_split_plan", "optimize_enhancing", "partition", "precision_recall_curve", "predict", "prepare",
    "query_attack", "run_protocol", "save_ensemble", "select_enhancing", "select_vulnerable", "sweep",
    "toy_demonstration", "train", "update", "write_csv", "write_report",
]
