"""Closed-form stand-ins for the score and discriminator on Gaussian testbeds.

These implement the same duck-typed surfaces as the trained models
(``score(x, labels, t)`` and ``logit_input_grad(x, labels, t)``) so samplers,
guidance, and diagnostics can run against exact oracles.
"""

from __future__ import annotations

import numpy as np


class AnalyticGaussianScore:
    """Exact score of one isotropic Gaussian diffused under a schedule."""

    def __init__(self, schedule, mean, data_std, n_classes=1, data_dim=None):
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=np.float64)
        self.data_std = float(data_std)
        self.n_classes = n_classes
        self.data_dim = int(data_dim) if data_dim is not None else self.mean.shape[0]

    def score(self, x, labels, t):
        x = np.asarray(x, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        a, s = self.schedule.scale_and_noise(t)
        var = (a * self.data_std) ** 2 + s**2
        return -(x - a[:, None] * self.mean) / var[:, None]


class AnalyticMixtureScore:
    """Exact conditional score of an isotropic-Gaussian mixture.

    ``label_weights`` maps a conditioning label to component weights, so the
    same class can stand in for a clean conditional (one-hot weights), a fully
    label-noised model (uniform weights), or anything between.
    """

    def __init__(self, schedule, means, data_std, label_weights, data_dim=None):
        self.schedule = schedule
        self.means = np.asarray(means, dtype=np.float64)     # (K, d)
        self.data_std = float(data_std)
        self.label_weights = np.asarray(label_weights, dtype=np.float64)  # (L, K)
        self.n_classes = self.label_weights.shape[0]
        self.data_dim = int(data_dim) if data_dim is not None else self.means.shape[1]

    def score(self, x, labels, t):
        x = np.asarray(x, dtype=np.float64)
        b = x.shape[0]
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (b,))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        a, s = self.schedule.scale_and_noise(t)
        var = (a * self.data_std) ** 2 + s**2                 # (B,)
        diff = x[:, None, :] - a[:, None, None] * self.means[None, :, :]   # (B, K, d)
        sq = (diff**2).sum(axis=2)                            # (B, K)
        logw = np.log(self.label_weights[labels] + 1e-300)
        logp = logw - 0.5 * sq / var[:, None]
        logp -= logp.max(axis=1, keepdims=True)
        resp = np.exp(logp)
        resp /= resp.sum(axis=1, keepdims=True)
        comp_scores = -diff / var[:, None, None]
        return (resp[:, :, None] * comp_scores).sum(axis=1)


class AnalyticPairLogRatio:
    """Exact discriminator logit log(p_r,t / p_f,t) for two isotropic Gaussians.

    At every noise level the optimal logit for N(mu_r, sd^2) vs N(mu_f, sd^2)
    is linear in x, so both the logit and its input gradient are closed form.
    """

    def __init__(self, schedule, mean_r, mean_f, data_std=1.0):
        self.schedule = schedule
        self.mean_r = np.asarray(mean_r, dtype=np.float64)
        self.mean_f = np.asarray(mean_f, dtype=np.float64)
        self.data_std = float(data_std)

    def _var(self, t, batch):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        a, s = self.schedule.scale_and_noise(t)
        return a, (a * self.data_std) ** 2 + s**2

    def logit(self, x, labels, t):
        x = np.asarray(x, dtype=np.float64)
        a, var = self._var(t, x.shape[0])
        dr = x - a[:, None] * self.mean_r
        df = x - a[:, None] * self.mean_f
        return (-(dr**2).sum(axis=1) + (df**2).sum(axis=1)) / (2.0 * var)

    def prob(self, x, labels, t):
        return 1.0 / (1.0 + np.exp(-self.logit(x, labels, t)))

    def logit_input_grad(self, x, labels, t):
        x = np.asarray(x, dtype=np.float64)
        a, var = self._var(t, x.shape[0])
        return (a[:, None] * (self.mean_r - self.mean_f)) / var[:, None]
