"""Adversarial drift detection with a prediction model and a hidden detection model."""
from .adversary import AttackConfig, anchor_points_attack
from .dataio import LEGITIMATE, MALICIOUS, Dataset, generate_synthetic, load_csv, normalize
from .detectors import (AccuracyTracker, DetectorConfig, MarginDensity, NoChange, PredictDetect,
                        make_detector)
from .harness import ExperimentConfig, run_experiment
from .learners import LinearSVM, SplitModels, SubspaceEnsemble
from .stream import StreamSchedule, run_stream

__all__ = [
    "AccuracyTracker", "AttackConfig", "Dataset", "DetectorConfig", "ExperimentConfig",
    "LEGITIMATE", "LinearSVM", "MALICIOUS", "MarginDensity", "NoChange", "PredictDetect",
    "SplitModels", "StreamSchedule", "SubspaceEnsemble", "anchor_points_attack",
    "generate_synthetic", "load_csv", "make_detector", "normalize", "run_experiment",
    "run_stream",
]
__version__ = "0.1.0"
