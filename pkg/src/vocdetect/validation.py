"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np


def check_waveform_batch(X, input_len: int | None = None) -> np.ndarray:
    """Coerce X to a float32 (N, L) array of waveforms."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D (n_clips, n_samples) array, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"empty waveform batch with shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("waveforms contain non-finite values")
    if input_len is not None and X.shape[1] != input_len:
        raise ValueError(f"expected waveforms of length {input_len}, got {X.shape[1]}")
    return X


def check_binary_labels(y, n: int) -> np.ndarray:
    """Coerce labels to int64 {0: real, 1: fake}; accepts the string forms."""
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if y.dtype.kind in "US":
        mapping = {"real": 0, "fake": 1}
        bad = [v for v in np.unique(y) if v not in mapping]
        if bad:
            raise ValueError(f"unknown label values {bad}; expected 'real'/'fake'")
        return np.array([mapping[v] for v in y], dtype=np.int64)
    y = y.astype(np.int64)
    bad_vals = set(np.unique(y)) - {0, 1}
    if bad_vals:
        raise ValueError(f"labels must be 0 (real) or 1 (fake), got {sorted(bad_vals)}")
    return y


def check_domain_names(domains, y: np.ndarray) -> list[str]:
    """Validate per-clip domain names against labels; real <=> 'real'."""
    names = [str(d) for d in domains]
    if len(names) != len(y):
        raise ValueError(f"expected {len(y)} domain names, got {len(names)}")
    for name, label in zip(names, y):
        if (label == 0) != (name == "real"):
            raise ValueError(f"domain {name!r} inconsistent with label {int(label)}")
    return names


def check_finite_scalar(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise FloatingPointError(f"{name} is not finite: {value}")
    return value
