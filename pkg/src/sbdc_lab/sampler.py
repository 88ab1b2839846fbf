"""Deterministic Heun integration of the probability-flow reverse process.

Chains are embarrassingly parallel: chain i of a batch derives its starting
noise from the generator seeded with (seed, i), so a single chain run equals
the corresponding batch column bit for bit. The integrator itself uses no
randomness.

A guidance hook may add a term to the score at each evaluation. The hook is
called as ``hook(x, labels, t_eval, t_gate, is_predictor)`` where ``t_gate``
is the step's discretized level (gates are decided per step, not per
sub-evaluation) and may return None to leave the base score untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import NonFiniteError


@dataclass
class Trajectory:
    """One chain's states and denoised estimates at the N+1 grid levels."""

    ts: np.ndarray          # (N+1,) strictly decreasing
    xs: np.ndarray          # (N+1, d)
    x0s: np.ndarray         # (N+1, d) denoised estimate per level
    label: int
    seed: int

    @property
    def final(self):
        return self.xs[-1]


@dataclass
class BatchTrajectory:
    """Stacked trajectories for a batch of chains sharing one schedule."""

    ts: np.ndarray          # (N+1,)
    xs: np.ndarray          # (N+1, B, d)
    x0s: np.ndarray         # (N+1, B, d)
    labels: np.ndarray      # (B,)
    seed: int

    @property
    def final(self):
        return self.xs[-1]

    def chain(self, i):
        return Trajectory(self.ts, self.xs[:, i], self.x0s[:, i],
                          int(self.labels[i]), self.seed)


def initial_noise(schedule, n_chains, dim, seed):
    """Per-chain starting states at the noisiest level, derived from (seed, i)."""
    t0 = schedule.sampling_times()[0]
    _, s0 = schedule.scale_and_noise(t0)
    draws = np.stack(
        [np.random.default_rng([seed, i]).standard_normal(dim) for i in range(n_chains)]
    )
    return float(s0) * draws


def heun_sample_batch(model, labels, n_steps=None, seed=0, hook=None):
    """Integrate a batch of chains; returns a BatchTrajectory.

    The effective score at each evaluation is the model score plus the hook's
    additive term (when the hook fires). The denoised estimate recorded at each
    level comes from the predictor evaluation; at the terminal level the state
    itself is recorded (the residual noise there is the schedule's floor).
    """
    sched = model.schedule
    if n_steps is not None and n_steps != sched.steps:
        from dataclasses import replace
        sched = replace(sched, steps=int(n_steps))
    ts = sched.sampling_times()
    n = sched.steps
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b = labels.shape[0]
    dim = getattr(model, "data_dim", 2)

    x = initial_noise(sched, b, dim, seed)
    xs = np.empty((n + 1, b, dim))
    x0s = np.empty((n + 1, b, dim))

    def eff_score(state, t_eval, t_gate, is_predictor):
        s = model.score(state, labels, t_eval)
        if hook is not None:
            term = hook(state, labels, t_eval, t_gate, is_predictor)
            if term is not None:
                s = s + term
        return s

    for i in range(n):
        t_cur, t_next = ts[i], ts[i + 1]
        s_cur = eff_score(x, t_cur, t_cur, True)
        if not np.all(np.isfinite(s_cur)):
            raise NonFiniteError(f"non-finite score at step {n - i} (t={t_cur})", index=n - i)
        xs[i] = x
        x0s[i] = sched.denoised_from_score(x, s_cur, t_cur)
        d_cur = sched.ode_deriv(x, s_cur, t_cur)
        x_e = x + (t_next - t_cur) * d_cur
        s_next = eff_score(x_e, t_next, t_cur, False)
        d_next = sched.ode_deriv(x_e, s_next, t_next)
        x = x + (t_next - t_cur) * 0.5 * (d_cur + d_next)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state after step {n - i} (t={t_next})", index=n - i)
    xs[n] = x
    x0s[n] = x
    return BatchTrajectory(ts=ts, xs=xs, x0s=x0s, labels=labels, seed=seed)


def heun_sample(model, label, n_steps=None, seed=0, hook=None):
    """Single-chain convenience wrapper; equals chain 0 of a 1-chain batch."""
    batch = heun_sample_batch(model, [int(label)], n_steps=n_steps, seed=seed, hook=hook)
    return batch.chain(0)


def save_trajectory_csv(path, traj: Trajectory, step_numbers=None):
    """Dump one chain as CSV: step,t,x0,x1,xhat0_0,xhat0_1 (17 sig digits)."""
    n_levels = traj.ts.shape[0]
    if step_numbers is None:
        step_numbers = np.arange(n_levels - 1, -1, -1)
    with open(path, "w") as fh:
        fh.write("step,t,x0,x1,xhat0_0,xhat0_1\n")
        for k in range(n_levels):
            row = [f"{step_numbers[k]:d}", f"{traj.ts[k]:.17g}"]
            row += [f"{v:.17g}" for v in traj.xs[k]]
            row += [f"{v:.17g}" for v in traj.x0s[k]]
            fh.write(",".join(row) + "\n")
