"""Universal adversarial perturbations for speech command classifiers.

Library layout:

- ``audio``: fixed-length clips, PCM WAV I/O, label conventions
- ``loudness``: dB metrics, vocal/background partition, distortion audits
- ``frontend``: differentiable MFCC extraction with exact input gradients
- ``model``: compact CNN classifier, training, serialization
- ``attacks``: Deepfool, lp-ball projection, universal perturbation search
- ``report``: fooling/transferability tables
- ``dataset``: synthetic corpus and dataset layout handling
- ``cli``: command-line driver
"""

__version__ = "0.1.0"

from .audio import CANONICAL_LABELS, SAMPLE_RATE, CLIP_SAMPLES, Waveform, load_wav, save_wav
from .frontend import FrontendConfig, MODEL_A_FRONTEND, MODEL_B_FRONTEND, mfcc_forward, mfcc_backward
from .loudness import db_max, db_mean, relative_db, energy_partition, distortion_report
from .model import (
    Architecture,
    ClassifierModel,
    ModelParams,
    TrainConfig,
    forward,
    input_gradient,
    load_params,
    save_params,
    train,
)
from .attacks import (
    AttackConfig,
    Perturbation,
    UniversalityLevel,
    deepfool,
    fooling_ratio,
    project,
    raw_fooling_rate,
    run_level_experiment,
    uap_hc,
)
from .report import FoolingReport, evaluate_perturbation, export_report

__all__ = [
    "CANONICAL_LABELS", "SAMPLE_RATE", "CLIP_SAMPLES", "Waveform", "load_wav", "save_wav",
    "FrontendConfig", "MODEL_A_FRONTEND", "MODEL_B_FRONTEND", "mfcc_forward", "mfcc_backward",
    "db_max", "db_mean", "relative_db", "energy_partition", "distortion_report",
    "Architecture", "ClassifierModel", "ModelParams", "TrainConfig", "forward",
    "input_gradient", "load_params", "save_params", "train",
    "AttackConfig", "Perturbation", "UniversalityLevel", "deepfool", "fooling_ratio",
    "project", "raw_fooling_rate", "run_level_experiment", "uap_hc",
    "FoolingReport", "evaluate_perturbation", "export_report",
]
