"""Gated discriminator correction of the sampling score.

The corrected score is the base conditional score plus gamma(t) times the
input-gradient of the discriminator logit. The gate is the half-open
interval test gamma(t) = gamma for t in (s_clip_min, s_clip_max], 0
otherwise, decided once per sampling step at the step's discretized level.
When the gate is 0 the discriminator is never evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sampler import heun_sample_batch


@dataclass
class GuidanceConfig:
    """Strength and firing interval of the correction term."""

    gamma: float = 0.9
    s_clip_min: float = 1.5
    s_clip_max: float = 50.0
    enabled: bool = True
    predictor_only: bool = False   # restrict the term to the first Heun sub-eval

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.s_clip_min < self.s_clip_max:
            raise ValueError(
                f"need s_clip_min < s_clip_max, got ({self.s_clip_min}, {self.s_clip_max})"
            )

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "s_clip_min": self.s_clip_min,
            "s_clip_max": self.s_clip_max,
            "enabled": self.enabled,
        }

    @classmethod
    def full_range(cls, gamma, schedule):
        """Interval covering every level of the schedule (constant-gamma gate)."""
        hi = schedule.sampling_times()[0]
        return cls(gamma=gamma, s_clip_min=0.0, s_clip_max=float(hi), enabled=True)


def gamma_gate(t, config: GuidanceConfig):
    """gamma when t lies in (s_clip_min, s_clip_max], else 0."""
    if not config.enabled:
        return 0.0
    return config.gamma if config.s_clip_min < t <= config.s_clip_max else 0.0


def guided_score(score_model, disc, x, labels, t, config: GuidanceConfig):
    """Base score plus the gated logit gradient at one noise level.

    A zero gate returns the base score untouched (the discriminator is not
    evaluated at all). Non-finite guidance aborts with the offending (t, x).
    """
    x = np.asarray(x, dtype=np.float64)
    base = score_model.score(x, labels, t)
    g = gamma_gate(t, config)
    if g == 0.0:
        return base
    term = g * disc.logit_input_grad(x, labels, t)
    if not np.all(np.isfinite(term)):
        bad = int(np.flatnonzero(~np.isfinite(term).all(axis=1))[0])
        raise FloatingPointError(
            f"non-finite guidance at t={t}, x={x[bad]}"
        )
    return base + term


@dataclass
class GateTrace:
    """Per-step gate decisions and guidance magnitudes along one sampling run."""

    steps: list = field(default_factory=list)      # countdown step numbers
    ts: list = field(default_factory=list)
    gates: list = field(default_factory=list)      # 0 or gamma
    norms: list = field(default_factory=list)      # mean guidance norm at predictor

    def append(self, step, t, gate, norm):
        self.steps.append(int(step))
        self.ts.append(float(t))
        self.gates.append(float(gate))
        self.norms.append(float(norm))

    def fired_steps(self):
        return [s for s, g in zip(self.steps, self.gates) if g > 0.0]

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,t,gate,guidance_norm\n")
            for s, t, g, n in zip(self.steps, self.ts, self.gates, self.norms):
                fh.write(f"{s:d},{t:.17g},{g:.17g},{n:.17g}\n")


class DiscriminatorHook:
    """Sampler hook adding gamma(t) * grad_x g; counts discriminator calls.

    The gate argument is the step's discretized level, so both Heun
    sub-evaluations of a step share one gate decision.
    """

    def __init__(self, disc, config: GuidanceConfig, n_steps):
        self.disc = disc
        self.config = config
        self.n_steps = n_steps
        self.calls = 0
        self.trace = GateTrace()
        self._seen = set()

    def __call__(self, x, labels, t_eval, t_gate, is_predictor):
        gate = gamma_gate(t_gate, self.config)
        term = None
        if gate > 0.0 and not (self.config.predictor_only and not is_predictor):
            self.calls += 1
            term = gate * self.disc.logit_input_grad(x, labels, t_eval)
            if not np.all(np.isfinite(term)):
                raise FloatingPointError(f"non-finite guidance at t={t_eval}")
        if is_predictor and t_gate not in self._seen:
            self._seen.add(t_gate)
            step = self.n_steps - len(self._seen) + 1
            norm = 0.0
            if term is not None:
                norm = float(np.linalg.norm(term, axis=1).mean())
            self.trace.append(step, t_gate, gate, norm)
        return term


def guided_sample_batch(score_model, disc, labels, config: GuidanceConfig,
                        n_steps=None, seed=0):
    """Batch Heun sampling with the gated correction; returns (traj, gate trace)."""
    steps = n_steps if n_steps is not None else score_model.schedule.steps
    hook = DiscriminatorHook(disc, config, steps)
    traj = heun_sample_batch(score_model, labels, n_steps=n_steps, seed=seed, hook=hook)
    return traj, hook.trace


def guided_sample(score_model, disc, label, config: GuidanceConfig,
                  n_steps=None, seed=0):
    """Single-chain guided sampling; returns (Trajectory, GateTrace)."""
    batch, trace = guided_sample_batch(
        score_model, disc, [int(label)], config, n_steps=n_steps, seed=seed)
    return batch.chain(0), trace
