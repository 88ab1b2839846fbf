"""Diffusion time discretization and per-level noise scales.

Two forward conventions are supported:

* variance-exploding: ``x_t = x0 + sigma(t) * eps`` with ``t == sigma``,
  discretized on a power-law grid between ``sigma_max`` and ``sigma_min``
  (both endpoints included, N update intervals between N+1 levels);
* variance-preserving: ``x_t = sqrt(abar(t)) * x0 + sqrt(1 - abar(t)) * eps``
  with a linear beta ramp and t discretized linearly on [t_eps, 1].

Sampling steps are numbered countdown style: step N is the first update
(highest noise), step 1 the last. Level index i corresponds to step N - i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VE = "variance_exploding"
VP = "variance_preserving"


@dataclass
class NoiseSchedule:
    """Noise level parameterization plus the N-step sampling grid."""

    kind: str = VE
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    steps: int = 18
    # VP-only knobs; ignored for VE
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_eps: float = 1e-3

    def __post_init__(self):
        if self.kind not in (VE, VP):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.steps < 2:
            raise ValueError(f"need at least 2 sampling steps, got {self.steps}")
        if self.kind == VE and not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )

    # -- continuous-time range -------------------------------------------
    @property
    def t_min(self):
        return self.sigma_min if self.kind == VE else self.t_eps

    @property
    def t_max(self):
        return self.sigma_max if self.kind == VE else 1.0

    def _check_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.t_min - 1e-12) or np.any(t > self.t_max + 1e-12):
            raise ValueError(
                f"time {t} outside schedule range [{self.t_min}, {self.t_max}]"
            )
        return t

    # -- forward kernel ----------------------------------------------------
    def beta(self, t):
        return self.beta_min + np.asarray(t, dtype=np.float64) * (self.beta_max - self.beta_min)

    def alpha_bar(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.exp(-0.5 * (self.beta_max - self.beta_min) * t**2 - self.beta_min * t)

    def scale_and_noise(self, t):
        """(a, s) of the forward kernel x_t = a(t) x0 + s(t) eps."""
        t = self._check_t(t)
        if self.kind == VE:
            return np.ones_like(t), t
        ab = self.alpha_bar(t)
        return np.sqrt(ab), np.sqrt(1.0 - ab)

    def sigma_eff(self, t):
        """Noise-to-signal level s(t)/a(t); equals sigma for VE."""
        a, s = self.scale_and_noise(t)
        return s / a

    # -- sampling grid -----------------------------------------------------
    def sampling_times(self):
        """N+1 strictly decreasing levels t_0 .. t_N (t_0 noisiest).

        The VE grid is the rho-power interpolation between sigma_max and
        sigma_min inclusive; with the countdown step numbering this puts the
        default (1.5, 50] gate exactly on steps 8..16 of an 18-step run.
        """
        n = self.steps
        if self.kind == VE:
            i = np.arange(n + 1)
            a = self.sigma_max ** (1.0 / self.rho)
            b = self.sigma_min ** (1.0 / self.rho)
            return (a + i / n * (b - a)) ** self.rho
        return np.linspace(1.0, self.t_eps, n + 1)

    def step_numbers(self):
        """Countdown step number per level: N at t_0 down to 0 at t_N."""
        return np.arange(self.steps, -1, -1)

    # -- probability-flow pieces -------------------------------------------
    def ode_deriv(self, x, score, t):
        """dx/dt of the deterministic reverse process at state x with given score."""
        if self.kind == VE:
            return -t * score
        return -0.5 * self.beta(t) * (x + score)

    def denoised_from_score(self, x, score, t):
        """Recover the fully-denoised estimate x0 from the score at (x, t)."""
        if self.kind == VE:
            return x + (t * t) * score
        a, s = self.scale_and_noise(t)
        return (x + (s * s) * score) / a

    def to_dict(self):
        d = {
            "kind": self.kind,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "rho": self.rho,
            "steps": self.steps,
        }
        if self.kind == VP:
            d.update(beta_min=self.beta_min, beta_max=self.beta_max, t_eps=self.t_eps)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def perturb(x0, t, noise, schedule):
    """Forward-perturb x0 to time t with the given standard-normal draw."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    a, s = schedule.scale_and_noise(t)
    a = np.expand_dims(a, -1) if np.ndim(a) == 1 and x0.ndim == 2 else a
    s = np.expand_dims(s, -1) if np.ndim(s) == 1 and x0.ndim == 2 else s
    return a * x0 + s * noise


def dsm_target(x0, x_t, t, schedule):
    """Conditional score of the perturbation kernel, grad_{x_t} log p(x_t | x0)."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    a, s = schedule.scale_and_noise(t)
    if np.any(np.asarray(s) == 0.0):
        raise ValueError("zero noise scale: score of a point mass is undefined")
    a = np.expand_dims(a, -1) if np.ndim(a) == 1 and x0.ndim == 2 else a
    s = np.expand_dims(s, -1) if np.ndim(s) == 1 and x0.ndim == 2 else s
    return -(x_t - a * x0) / (s * s)
