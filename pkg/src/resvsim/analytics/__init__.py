"""Demand analytics: preprocessing, forecasting, segmentation and spike detection."""

from .preprocess import (
    CleanReport,
    FeatureMatrix,
    OneHotEncoder,
    aggregate,
    clean,
    denormalize,
    normalize,
    one_hot,
)
from .forecast import (
    DemandSeries,
    Forecast,
    SeasonalNaive,
    ARLeastSquares,
    TreeEnsemble,
    OracleForecaster,
    fit_forecaster,
    predict,
    accuracy,
    walk_forward_accuracy,
)
from .cluster import ClusterModel, kmeans_fit, segment_assign
from .anomaly import detect_spike

__all__ = [
    "CleanReport", "FeatureMatrix", "clean", "normalize", "denormalize", "one_hot",
    "OneHotEncoder", "aggregate",
    "DemandSeries", "Forecast", "SeasonalNaive", "ARLeastSquares", "TreeEnsemble",
    "OracleForecaster", "fit_forecaster", "predict", "accuracy", "walk_forward_accuracy",
    "ClusterModel", "kmeans_fit", "segment_assign", "detect_spike",
]
