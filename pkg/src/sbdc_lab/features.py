"""Shared input conditioning for the score and discriminator networks.

Both networks see the concatenation of the (rescaled) state, a one-hot class
vector, and a small log-noise-level embedding. Class count K=1 degenerates to
a constant channel so conditioning has no effect in the single-class case.
"""

from __future__ import annotations

import numpy as np

TIME_FREQS = (1.0, 2.0, 4.0)
N_TIME_FEATURES = 1 + 2 * len(TIME_FREQS)


def time_features(sigma):
    """Embed noise levels (B,) as (B, 7): log level plus sin/cos harmonics."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    u = np.log(sigma)
    cols = [u / 4.0]
    for f in TIME_FREQS:
        cols.append(np.sin(f * u))
        cols.append(np.cos(f * u))
    return np.stack(cols, axis=1)


def one_hot(labels, n_classes):
    """One-hot encode integer labels; with K=1 every label maps to [1.0]."""
    labels = np.atleast_1d(np.asarray(labels))
    if n_classes == 1:
        return np.ones((labels.shape[0], 1))
    labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got {labels}")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def as_label_matrix(labels, n_classes, batch):
    """Accept an int, an int array, or an already-soft (B, K) matrix."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (batch, n_classes):
            raise ValueError(
                f"soft labels must have shape ({batch}, {n_classes}), got {labels.shape}"
            )
        return np.asarray(labels, dtype=np.float64)
    if labels.ndim == 0:
        labels = np.full(batch, int(labels))
    return one_hot(labels, n_classes)
