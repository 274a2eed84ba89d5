"""Interval statistics over a condition range from one learned prefix network."""
from .baselines import AnalyticSource, McConfig, PredictorSource, dense_reference, mc_estimate
from .condition_space import ConditionDistribution, QuantileInterval, from_quantile, interval_to_quantiles, to_quantile
from .dynamics import Dataset, TrajectoryParams, generate_dataset, instantaneous_energy, load_dataset, save_dataset
from .errors import PrefixStatsError
from .harness import ErrorReport, WidthBin, rel_l2, run_experiment, width_binned_eval
from .nn import Checkpoint, Mlp, MlpConfig
from .query import IntervalQuery, PrefixModel, QueryResult, interval_statistic, quantile_bisect
from .training import TrainConfig, train_predictor, train_prefix
from .transforms import CdfAt, Exceedance, Max, Mean, Quantile, RangeProb, parse_stat

__version__ = "0.1.0"

__all__ = [
    "AnalyticSource",
    "CdfAt",
    "Checkpoint",
    "ConditionDistribution",
    "Dataset",
    "dense_reference",
    "ErrorReport",
    "Exceedance",
    "from_quantile",
    "generate_dataset",
    "instantaneous_energy",
    "interval_statistic",
    "interval_to_quantiles",
    "IntervalQuery",
    "load_dataset",
    "Max",
    "mc_estimate",
    "McConfig",
    "Mean",
    "Mlp",
    "MlpConfig",
    "parse_stat",
    "PredictorSource",
    "PrefixModel",
    "PrefixStatsError",
    "Quantile",
    "quantile_bisect",
    "QuantileInterval",
    "QueryResult",
    "RangeProb",
    "rel_l2",
    "run_experiment",
    "save_dataset",
    "to_quantile",
    "train_predictor",
    "train_prefix",
    "TrainConfig",
    "TrajectoryParams",
    "width_binned_eval",
    "WidthBin",
]
