"""Consensus voting over populations of hourly sepsis prediction streams."""

__version__ = "0.1.0"

from .errors import ConfigError, CoverageError, FormatError, SepsisVoteError, UndefinedScoreError
from .records import (
    VARIABLES, EventTimeline, PatientRecord, PredictionStream,
    empirical_cdf, parse_event_file, parse_patient_file, parse_prediction_file,
)
from .labeler import (
    LabelTimeline, hourly_labels, include_record, label_cohort, label_record,
    sepsis_onset, sofa_time, suspicion_time,
)
from .utility import UtilityParams, UtilityTrace, hourly_utility, normalized_score, utility_trace
from .diversity import (
    SimilarityMatrix, fleiss_kappa, kappa_distribution, similarity_matrix,
    unweighted_similarity, weighted_similarity,
)
from .codesim import AstTree, EditCosts, code_similarity, code_similarity_matrix, parse_tree, tree_edit_distance
from .ensemble import (
    EnsembleSpec, RegimeSelector, VoteRule, apply_ensemble, greedy_select, select_regime, vote,
)
from .synth import SynthConfig, generate_cohort, generate_predictors
