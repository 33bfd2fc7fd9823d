"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .errors import UsageError


def check_fields(X, name="X"):
    """Return ``X`` as a (N, H, W) uint8 batch of bits."""
    X = np.asarray(X)
    if X.ndim == 4 and X.shape[-1] == 1:
        X = X[..., 0]
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or 0 in X.shape:
        raise UsageError(f"{name} must be a nonempty (N, H, W) batch of fields, got {X.shape}")
    if np.issubdtype(X.dtype, np.floating) and not np.isin(X, (0.0, 1.0)).all():
        raise UsageError(f"{name} must contain only 0 and 1")
    if X.min() < 0 or X.max() > 1:
        raise UsageError(f"{name} must contain only 0 and 1")
    return X.astype(np.uint8)


def check_targets(y, X):
    """Targets are fields shaped like ``X`` or one label per sample."""
    y = np.asarray(y)
    if y.ndim == 1:
        if len(y) != len(X):
            raise UsageError(f"got {len(y)} labels for {len(X)} samples")
        if not np.isin(y, (0, 1)).all():
            raise UsageError("labels must be 0 or 1")
        return y.astype(np.uint8)
    y = check_fields(y, "y")
    if y.shape != X.shape:
        raise UsageError(f"target fields {y.shape} do not match inputs {X.shape}")
    return y
