"""scikit-learn style wrapper: ``fit`` on a multivariate series, ``predict`` windows."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import RawSeries, make_windows
from .metrics import forecast_metrics
from .models import ModelConfig, TLNet
from .tensor import no_grad
from .training import TrainConfig, train

__all__ = ["TLNetForecaster", "check_series", "check_windows"]


def check_series(X, min_rows=1):
    """Validate a ``(n_steps, d)`` float series (a :class:`RawSeries` is unwrapped)."""
    if isinstance(X, RawSeries):
        X = X.values
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_rows)
    return X


def check_windows(X, channels=None, length=None, name="X"):
    """Validate ``(n_windows, d, t)`` windows; a single ``(d, t)`` window is promoted."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_windows, channels, time), got {X.shape}")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"{name} has {X.shape[1]} channels, the model was fit on {channels}")
    if length is not None and X.shape[2] != length:
        raise ValueError(f"{name} has {X.shape[2]} time steps, expected {length}")
    return X


class TLNetForecaster(RegressorMixin, BaseEstimator):
    """Train a forecaster on one series and forecast ``pred_len`` steps per input window.

    ``fit`` normalizes with statistics of the leading train share, trains
    with early stopping on the validation share and keeps the best weights.
    ``predict`` takes windows on the original scale and answers on it too.
    """

    def __init__(self, arch="ft_svd", input_len=96, pred_len=24, layers=2, activation="relu",
                 kernel_size=3, band_widths=(3, 9, 27), global_rows=4, lr=1e-3, batch_size=32,
                 max_epochs=10, patience=5, loss="mse", optimizer="adam", max_steps=None,
                 ratios=(7, 1, 2), seed=0):
        self.arch = arch
        self.input_len = input_len
        self.pred_len = pred_len
        self.layers = layers
        self.activation = activation
        self.kernel_size = kernel_size
        self.band_widths = band_widths
        self.global_rows = global_rows
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.loss = loss
        self.optimizer = optimizer
        self.max_steps = max_steps
        self.ratios = ratios
        self.seed = seed

    def _model_config(self, channels):
        return ModelConfig(self.arch, self.input_len, self.pred_len, channels, self.layers,
                           self.activation, tuple(self.band_widths), self.global_rows,
                           self.kernel_size, seed=self.seed)

    def _train_config(self):
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, loss=self.loss, seed=self.seed,
                           optimizer=self.optimizer, max_steps=self.max_steps)

    def fit(self, X, y=None):
        X = check_series(X, min_rows=self.input_len + self.pred_len)
        dataset = make_windows(X, self.input_len, self.pred_len, self.ratios)
        self.model_ = TLNet(self._model_config(X.shape[1]))
        result = train(self.model_, dataset, self._train_config())
        self.mean_, self.std_ = dataset.mean, dataset.std
        self.history_ = result.history
        self.n_features_in_ = X.shape[1]
        self.dataset_ = dataset
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X, self.n_features_in_, self.input_len)
        z = (X - self.mean_[:, None]) / self.std_[:, None]
        with no_grad():
            out = self.model_(z).data
        return out * self.std_[:, None] + self.mean_[:, None]

    def score(self, X, y, sample_weight=None):
        """Negative mean squared error on the original scale (higher is better)."""
        y = check_windows(y, self.n_features_in_, self.pred_len, name="y")
        return -forecast_metrics(self.predict(X), y)["mse"]
