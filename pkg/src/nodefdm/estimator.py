"""scikit-learn style wrappers around the model, the baseline and the phase labeller.

Samples are whole flights: ``X`` is a sequence of :class:`FlightSeries`. The
targets live inside each flight, so ``y`` is accepted and ignored.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import baseline as bl
from . import evaluation as ev
from . import performance as perf
from .data import SEQUENCE_LENGTH, FlightDataError, FlightSeries, compute_norm_stats, slice_sequences
from .model import LossWeights, NodeFdm, stack_sequences
from .training import TrainConfig, evaluate_loss, train


def check_flights(X, min_records: int = 1) -> list[FlightSeries]:
    """Validate a collection of flights and return it as a list."""
    if isinstance(X, FlightSeries):
        X = [X]
    try:
        flights = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of FlightSeries, got {type(X).__name__}") from None
    if not flights:
        raise ValueError("no flights")
    for f in flights:
        if not isinstance(f, FlightSeries):
            raise TypeError(f"expected FlightSeries, got {type(f).__name__}")
        f.validate(min_records=min_records)
    return flights


def _windows(flights, length):
    return [s for f in flights for s in slice_sequences(f, length)]


class NodeFdmRegressor(BaseEstimator):
    """Neural-ODE flight dynamics model trained on fixed-length windows.

    Parameters
    ----------
    epochs, batch_size, lr, weight_decay : training hyperparameters (AdamW).
    weight_convention : ``"inverse_variance"`` or ``"inverse_std"`` loss weights.
    include_distance : also fit along-track distance.
    sequence_length : window length in records.
    random_state : seed for initialisation and shuffling.
    """

    def __init__(self, epochs: int = 1000, batch_size: int = 32, lr: float = 1e-4,
                 weight_decay: float = 1e-4, weight_convention: str = "inverse_variance",
                 include_distance: bool = False, sequence_length: int = SEQUENCE_LENGTH,
                 random_state: int = 0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.weight_convention = weight_convention
        self.include_distance = include_distance
        self.sequence_length = sequence_length
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay, seed=self.random_state,
                           weight_convention=self.weight_convention,
                           include_distance=self.include_distance,
                           sequence_length=self.sequence_length)

    def fit(self, X, y=None, X_val=None):
        """Fit on training flights; ``X_val`` selects the best epoch when given."""
        flights = check_flights(X, self.sequence_length)
        val = check_flights(X_val, self.sequence_length) if X_val is not None else []
        self.norm_stats_ = compute_norm_stats(flights)
        self.model_ = NodeFdm(self.norm_stats_, seed=self.random_state)
        config = self._config()
        self.loss_weights_ = LossWeights.from_stats(self.norm_stats_, config.weight_convention,
                                                    config.include_distance)
        result = train(self.model_, _windows(flights, self.sequence_length),
                       _windows(val, self.sequence_length), config, self.loss_weights_)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_windows_ = len(_windows(flights, self.sequence_length))
        return self

    def predict(self, X) -> list[FlightSeries]:
        """Full-flight rollouts from each flight's first record."""
        check_is_fitted(self, "model_")
        return [self.model_.predict_flight(f) for f in check_flights(X)]

    def score(self, X, y=None) -> float:
        """Negative mean composite window loss (higher is better)."""
        check_is_fitted(self, "model_")
        seqs = _windows(check_flights(X, self.sequence_length), self.sequence_length)
        if not seqs:
            raise FlightDataError("no complete windows to score")
        return -evaluate_loss(self.model_, stack_sequences(seqs), self.loss_weights_)

    @classmethod
    def from_model(cls, model: NodeFdm, **params) -> "NodeFdmRegressor":
        """Wrap an already trained model (for instance one loaded from a checkpoint)."""
        est = cls(**params)
        est.model_ = model
        est.norm_stats_ = model.stats
        est.loss_weights_ = LossWeights.from_stats(model.stats, est.weight_convention,
                                                   est.include_distance)
        return est


class PointMassBaseline(BaseEstimator):
    """Physics benchmark replaying recorded targets through the point-mass model.

    ``perturbation`` degrades the coefficients (drag up, thrust and TSFC down)
    to stand in for an imperfect performance model.
    """

    def __init__(self, config: perf.PerformanceConfig | None = None, perturbation: float = 0.0,
                 guidance: bl.Guidance | None = None):
        self.config = config
        self.perturbation = perturbation
        self.guidance = guidance

    def fit(self, X=None, y=None):
        cfg = self.config if self.config is not None else perf.PerformanceConfig()
        self.config_ = cfg.perturbed(self.perturbation) if self.perturbation else cfg
        self.guidance_ = self.guidance if self.guidance is not None else bl.Guidance()
        return self

    def predict(self, X) -> list[FlightSeries]:
        check_is_fitted(self, "config_")
        return [bl.simulate_flight(f, self.config_, self.guidance_) for f in check_flights(X)]


class PhaseLabeler(TransformerMixin, BaseEstimator):
    """Climb / level / descent labels from smoothed vertical speed."""

    def __init__(self, vz_threshold: float = ev.VZ_THRESHOLD, hysteresis: int = ev.HYSTERESIS,
                 smoothing: int = ev.SMOOTHING):
        self.vz_threshold = vz_threshold
        self.hysteresis = hysteresis
        self.smoothing = smoothing

    def fit(self, X=None, y=None):
        if self.vz_threshold <= 0:
            raise ValueError("vz_threshold must be positive")
        if self.hysteresis < 1 or self.smoothing < 1:
            raise ValueError("hysteresis and smoothing must be at least 1")
        self.fitted_ = True
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "fitted_")
        return [ev.label_phases(f, self.vz_threshold, self.hysteresis, self.smoothing)
                for f in check_flights(X)]
