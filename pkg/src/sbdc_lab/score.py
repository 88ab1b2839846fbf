"""Conditional score network and its denoising-score-matching training loop.

The network predicts in a preconditioned space: the state is rescaled to the
unit-signal parameterization (x / a(t)), fed through skip/output/input scaling
chosen per noise level, and the raw head output is an O(1) residual. The
exposed quantities are the denoised estimate and the native-space score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import N_TIME_FEATURES, as_label_matrix, time_features
from .nn import AdamState, DenseNetwork, NonFiniteError, flatten_grads
from .schedule import NoiseSchedule


class TrainingDiverged(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass
class TrainConfig:
    """Knobs for the Adam training loops."""

    steps: int = 6000
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0       # final lr = lr * lr_decay, linear ramp
    ema_decay: float = 0.999    # 0 disables parameter averaging
    trace_every: int = 50
    mirror_augment: bool = False


@dataclass
class LossTrace:
    """Per-checkpoint loss record: raw, EMA-smoothed, and its running minimum."""

    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    smoothed: list = field(default_factory=list)
    monotone: list = field(default_factory=list)

    def append(self, step, raw, smooth):
        self.steps.append(int(step))
        self.loss.append(float(raw))
        self.smoothed.append(float(smooth))
        prev = self.monotone[-1] if self.monotone else float("inf")
        self.monotone.append(min(prev, float(smooth)))


class ScoreModel:
    """Time-dependent conditional score s(x, y, t) over 2D (or d-D) states."""

    role = "score"

    def __init__(self, schedule: NoiseSchedule, n_classes, data_dim=2,
                 hidden=(128, 128), sigma_data=0.5, seed=0):
        self.schedule = schedule
        self.n_classes = int(n_classes)
        self.data_dim = int(data_dim)
        self.sigma_data = float(sigma_data)
        sizes = (self.data_dim + self.n_classes + N_TIME_FEATURES, *hidden, self.data_dim)
        self.net = DenseNetwork(sizes, seed=seed)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = seed

    # -- preconditioning ----------------------------------------------------
    def _precond(self, sigma):
        sd2 = self.sigma_data**2
        denom = sigma**2 + sd2
        c_skip = sd2 / denom
        c_out = sigma * self.sigma_data / np.sqrt(denom)
        c_in = 1.0 / np.sqrt(denom)
        return c_skip, c_out, c_in

    def _net_input(self, xn, labels, sigma):
        b = xn.shape[0]
        y = as_label_matrix(labels, self.n_classes, b)
        _, _, c_in = self._precond(sigma)
        return np.concatenate([c_in[:, None] * xn, y, time_features(sigma)], axis=1)

    def _normalize(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        a, s = self.schedule.scale_and_noise(t)
        sigma = s / a
        return x / a[:, None], a, sigma

    # -- inference ------------------------------------------------------------
    def denoise(self, x, labels, t):
        """Denoised estimate x0_hat at native state x and time t."""
        x = np.asarray(x, dtype=np.float64)
        xn, _, sigma = self._normalize(x, t)
        c_skip, c_out, _ = self._precond(sigma)
        raw = self.net.forward(self._net_input(xn, labels, sigma))
        return c_skip[:, None] * xn + c_out[:, None] * raw

    def score(self, x, labels, t):
        """Native-space score estimate of grad_x log p_t(x | label)."""
        x = np.asarray(x, dtype=np.float64)
        xn, a, sigma = self._normalize(x, t)
        x0 = self.denoise(x, labels, t)
        return (x0 - xn) / (a * sigma**2)[:, None]

    # -- persistence -----------------------------------------------------------
    def extra_dict(self):
        return {
            "n_classes": self.n_classes,
            "data_dim": self.data_dim,
            "hidden": list(self.hidden),
            "sigma_data": self.sigma_data,
            "schedule": self.schedule.to_dict(),
        }

    @classmethod
    def from_checkpoint_doc(cls, net, doc):
        extra = doc["extra"]
        model = cls(
            NoiseSchedule.from_dict(extra["schedule"]),
            n_classes=extra["n_classes"],
            data_dim=extra["data_dim"],
            hidden=tuple(extra["hidden"]),
            sigma_data=extra["sigma_data"],
            seed=doc.get("seed") or 0,
        )
        model.net = net
        return model


def train_score(model: ScoreModel, dataset, config: TrainConfig, seed=0):
    """Fit the score model on (x, y_obs) pairs with the sigma-weighted DSM loss.

    Noise levels are drawn log-uniformly over the schedule's effective range;
    the loss is the preconditioned residual MSE, which weights score errors by
    sigma^2 relative to the raw DSM objective. Returns (model, LossTrace).
    With ema_decay > 0 the model keeps the exponential average of its weights.
    """
    if dataset.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.steps == 0:
        return model, LossTrace()
    rng = np.random.default_rng(seed)
    x_all = dataset.x
    y_all = dataset.y_obs
    sched = model.schedule
    lo, hi = np.log(sched.sigma_eff(sched.t_min)), np.log(sched.sigma_eff(sched.t_max))

    opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    params = model.net.params_flat()
    ema = params.copy() if config.ema_decay > 0 else None
    trace = LossTrace()
    smooth = None

    for step in range(config.steps):
        idx = rng.integers(0, dataset.n, size=config.batch_size)
        x0 = x_all[idx]
        y = y_all[idx]
        if config.mirror_augment:
            flip = rng.random(config.batch_size) < 0.5
            x0 = x0.copy()
            x0[flip, 0] = -x0[flip, 0]
        sigma = np.exp(rng.uniform(lo, hi, size=config.batch_size))
        noise = rng.standard_normal(x0.shape)
        xn_t = x0 + sigma[:, None] * noise

        c_skip, c_out, _ = model._precond(sigma)
        target = (x0 - c_skip[:, None] * xn_t) / c_out[:, None]
        inputs = model._net_input(xn_t, y, sigma)

        def loss_fn(out):
            resid = out - target
            per_sample = (resid**2).sum(axis=1)
            dout = 2.0 * resid / out.shape[0]
            return per_sample, dout

        try:
            loss, grads, _ = model.net.value_and_grad(inputs, loss_fn)
        except NonFiniteError as err:
            raise TrainingDiverged(f"score training diverged at step {step}", step) from err
        if not np.isfinite(loss):
            raise TrainingDiverged(f"score training diverged at step {step}", step)

        frac = step / max(config.steps - 1, 1)
        lr = config.lr * (1.0 + frac * (config.lr_decay - 1.0))
        params = opt.update(params, flatten_grads(grads), lr=lr)
        model.net.set_params_flat(params)
        if ema is not None:
            ema += (1.0 - config.ema_decay) * (params - ema)

        smooth = loss if smooth is None else 0.98 * smooth + 0.02 * loss
        if step % config.trace_every == 0 or step == config.steps - 1:
            trace.append(step, loss, smooth)

    if ema is not None:
        model.net.set_params_flat(ema)
    return model, trace
