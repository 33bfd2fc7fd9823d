"""scikit-learn style wrapper around network construction and training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import gates
from ._validation import check_fields, check_targets
from .errors import UsageError
from .manifold import Neighborhood
from .network import (HARD, ZERO_PAD, build_network, harden_network, network_forward,
                      readout_count)
from .training import Dataset, TrainConfig, evaluate, train


class BoolFieldEstimator(BaseEstimator):
    """Learn a synchronous Boolean update rule from (field, target) pairs.

    Parameters
    ----------
    neighborhood : str
        ``"moore8"`` or ``"von_neumann4"``.
    m, d, n_layers, kernel_widths, steps
        Network shape; see :func:`boolfield.network.build_network`.
    bias : float
        Initial attention bias. Large values keep attention open.
    frozen : tuple of str
        Parameter name patterns excluded from updates, e.g. ``("*.bias",)``.
    mode : {"hard", "packed"}
        Execution path used by ``predict`` and ``transform``.
    random_state : int
        Seeds wiring, initialization and batch shuffling.

    Attributes
    ----------
    network_ : NetworkParams
        Relaxed network after ``fit`` (hardened after ``harden``).
    history_ : list of dict
        Per-epoch metrics.
    """

    def __init__(self, neighborhood="moore8", m=1, d=4, n_layers=1, kernel_widths=(32, 16),
                 steps=1, upscale=ZERO_PAD, tau=0.5, bias=0.0, use_position=True,
                 pass_bias=1.0, noise=0.01, residual_bias=None, learning_rate=0.01,
                 epochs=200, batch_size=32, lambda_start=2.0, lambda_end=50.0,
                 temperature_start=1.0, temperature_end=0.1, entropy_weight=0.0,
                 frozen=(), mode=HARD, random_state=0, n_jobs=1):
        self.neighborhood = neighborhood
        self.m = m
        self.d = d
        self.n_layers = n_layers
        self.kernel_widths = kernel_widths
        self.steps = steps
        self.upscale = upscale
        self.tau = tau
        self.bias = bias
        self.use_position = use_position
        self.pass_bias = pass_bias
        self.noise = noise
        self.residual_bias = residual_bias
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lambda_start = lambda_start
        self.lambda_end = lambda_end
        self.temperature_start = temperature_start
        self.temperature_end = temperature_end
        self.entropy_weight = entropy_weight
        self.frozen = frozen
        self.mode = mode
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _build(self, shape):
        return build_network(
            grid=shape, neighborhood=Neighborhood(self.neighborhood), m=self.m, d=self.d,
            n_layers=self.n_layers, kernel_widths=tuple(self.kernel_widths),
            seed=self.random_state, steps=self.steps, upscale=self.upscale, tau=self.tau,
            bias=self.bias, lam=self.lambda_start, use_position=self.use_position,
            temperature=self.temperature_start, pass_bias=self.pass_bias, noise=self.noise,
            residual_init=gates.PASS_B, residual_bias=self.residual_bias)

    def fit(self, X, y):
        X = check_fields(X)
        y = check_targets(y, X)
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            lambda_start=self.lambda_start, lambda_end=self.lambda_end,
            temperature_start=self.temperature_start, temperature_end=self.temperature_end,
            entropy_weight=self.entropy_weight, seed=self.random_state, threads=self.n_jobs,
            frozen=tuple(self.frozen))
        net = self._build(X.shape[1:])
        self.network_, self.history_ = train(net, Dataset(X, y), cfg)
        self.labels_ = y.ndim == 1
        return self

    def harden(self):
        """Replace the fitted network by its discretized form; returns self."""
        check_is_fitted(self, "network_")
        self.network_ = harden_network(self.network_)
        return self

    def transform(self, X):
        """Hard evolved fields, shape (N, H, W, m)."""
        check_is_fitted(self, "network_")
        X = check_fields(X)
        net = harden_network(self.network_)
        if self.mode == "packed":
            from .packed import packed_network_forward
            return packed_network_forward(X, net)
        if self.mode != HARD:
            raise UsageError(f"mode must be 'hard' or 'packed', got {self.mode!r}")
        return network_forward(X, net, HARD)

    def predict(self, X):
        """Bit-plane-0 fields, or labels when fitted on scalar targets."""
        out = self.transform(X)
        if self.labels_:
            return (readout_count(out) >= self.network_.readout_threshold).astype(np.uint8)
        return out[..., 0]

    def score(self, X, y):
        """Hardened bit accuracy."""
        check_is_fitted(self, "network_")
        X = check_fields(X)
        return evaluate(self.network_, Dataset(X, check_targets(y, X)), HARD)["bit_accuracy"]
