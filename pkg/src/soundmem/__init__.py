"""Auditory memorability experiment platform and analysis toolkit."""

from .audio import (
    AudioClip,
    DecodeError,
    InsufficientAudio,
    Spectrogram,
    UnsupportedFormat,
    decode_audio,
    log_compress,
    resample_clip,
    stft_magnitude,
)
from .experiment import (
    PlanConfig,
    PlanInfeasible,
    SessionLog,
    SessionPlan,
    SoundScore,
    ValidationResult,
    WorkerExhausted,
    WorkerHistory,
    plan_session,
    score_sounds,
    split_rank_reliability,
    validate_session,
)
from .features import FeatureTable, build_feature_table, ingest_high_level
from .salience import SalienceConfig, SalienceMaps, salience_maps, salience_summary
from .simulant import SimulantProfile, planted_truth, simulate_games
from .stats import Dataset, RegressorConfig, fit_logistic, fit_regressor, shapley_importance, spearman

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "DecodeError",
    "InsufficientAudio",
    "Spectrogram",
    "UnsupportedFormat",
    "decode_audio",
    "log_compress",
    "resample_clip",
    "stft_magnitude",
    "PlanConfig",
    "PlanInfeasible",
    "SessionLog",
    "SessionPlan",
    "SoundScore",
    "ValidationResult",
    "WorkerExhausted",
    "WorkerHistory",
    "plan_session",
    "score_sounds",
    "split_rank_reliability",
    "validate_session",
    "FeatureTable",
    "build_feature_table",
    "ingest_high_level",
    "SalienceConfig",
    "SalienceMaps",
    "salience_maps",
    "salience_summary",
    "SimulantProfile",
    "planted_truth",
    "simulate_games",
    "Dataset",
    "RegressorConfig",
    "fit_logistic",
    "fit_regressor",
    "shapley_importance",
    "spearman",
    "__version__",
]
