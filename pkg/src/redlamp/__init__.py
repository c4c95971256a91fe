"""Pseudo-anomaly augmentation detector for time series: data, model, training, scoring and metrics."""

from .augment import ALL_KINDS, ANOMALY_KINDS, AugmentConfig, Kind
from .data import LabeledSeries, load_csv, load_ucr, minmax_normalize, window
from .evaluation import EvalReport, evaluate, range_auc, range_fscore, ucr_accuracy, vus
from .nn import Model, ModelConfig, load_checkpoint, save_checkpoint
from .score import ScoreTrace, score_series
from .train import TrainConfig, fit

__version__ = "0.1.0"
