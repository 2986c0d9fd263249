"""Joint behavior classification and simulation with recurrent networks."""

from .codec import BinSpec, MotionBinner, decode_motion, encode_motion, fit_bins, sample_motion
from .data import AgentTrack, Bout, TrialData, load_trial, make_batches, save_trial, subsample_labels
from .estimator import BehaviorModel
from .exceptions import BesimError, ConfigError, ContractError, DataError, SimulationError, TrainingError
from .metrics import BaselinePolicy, f1_scores, f_star, match_bouts, motion_loglik
from .model import BehaviorNetwork, ModelConfig
from .simulate import SimConfig, export_hidden_states, simulate_flies, simulate_handwriting

__version__ = "0.1.0"

__all__ = [
    "AgentTrack", "BaselinePolicy", "BehaviorModel", "BehaviorNetwork", "BesimError", "BinSpec", "Bout",
    "ConfigError", "ContractError", "DataError", "ModelConfig", "MotionBinner", "SimConfig", "SimulationError",
    "TrainingError", "TrialData", "decode_motion", "encode_motion", "export_hidden_states", "f1_scores", "f_star",
    "fit_bins", "load_trial", "make_batches", "match_bouts", "motion_loglik", "sample_motion", "save_trial",
    "simulate_flies", "simulate_handwriting", "subsample_labels",
]
