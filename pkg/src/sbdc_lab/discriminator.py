"""Time-dependent discriminator between pseudo-clean and pseudo-corrupt data.

The model is a logit head g(x_t, y, t); D = sigmoid(g). All loss math runs in
logit space (softplus form), so the guidance quantity log(D / (1 - D)) is the
logit itself with no sigmoid round trip. Training follows the sampled-batch
loop: draw a mixed batch, pseudo-clean shuffle, SiMix, perturb each instance
at its own noise level, then one cross-entropy step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import N_TIME_FEATURES, as_label_matrix, time_features
from .nn import AdamState, DenseNetwork, NonFiniteError, flatten_grads
from .schedule import NoiseSchedule
from .score import LossTrace, TrainConfig, TrainingDiverged


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


class DiscriminatorModel:
    """Logit network g(x, y, t) with the same conditioning as the score net."""

    role = "discriminator"

    def __init__(self, schedule: NoiseSchedule, n_classes, data_dim=2,
                 hidden=(256, 256, 256), sigma_data=0.5, seed=0):
        self.schedule = schedule
        self.n_classes = int(n_classes)
        self.data_dim = int(data_dim)
        self.sigma_data = float(sigma_data)
        sizes = (self.data_dim + self.n_classes + N_TIME_FEATURES, *hidden, 1)
        self.net = DenseNetwork(sizes, seed=seed)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = seed

    def _scales(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        a, s = self.schedule.scale_and_noise(t)
        sigma = s / a
        c_in = 1.0 / np.sqrt(sigma**2 + self.sigma_data**2)
        return a, sigma, c_in

    def _net_input(self, x, labels, t):
        x = np.asarray(x, dtype=np.float64)
        a, sigma, c_in = self._scales(x, t)
        y = as_label_matrix(labels, self.n_classes, x.shape[0])
        xn = (c_in / a)[:, None] * x
        return np.concatenate([xn, y, time_features(sigma)], axis=1), a, c_in

    def logit(self, x, labels, t):
        """g(x, y, t), one value per row."""
        inp, _, _ = self._net_input(x, labels, t)
        return self.net.forward(inp)[:, 0]

    def prob(self, x, labels, t):
        """D(x, y, t) = sigmoid(g)."""
        return sigmoid(self.logit(x, labels, t))

    def logit_input_grad(self, x, labels, t):
        """Reverse-mode gradient of the logit wrt the native-space state x."""
        x = np.asarray(x, dtype=np.float64)
        inp, a, c_in = self._net_input(x, labels, t)
        _, cache = self.net.forward_cached(inp)
        _, dinp = self.net.backward(cache, np.ones((x.shape[0], 1)))
        return dinp[:, : self.data_dim] * (c_in / a)[:, None]

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


# -- batches and augmentations --------------------------------------------------

@dataclass
class AugmentedBatch:
    """Instances flowing through the discriminator training loop.

    ``y`` is a (B, K) label matrix: hard one-hot rows before SiMix, convex
    combinations after. ``r`` is the soft verified weight in [0, 1].
    """

    x: np.ndarray           # (B, d)
    y: np.ndarray           # (B, K), rows sum to 1
    r: np.ndarray           # (B,)
    t: np.ndarray = None    # (B,) per-instance noise levels, set before perturb
    x_t: np.ndarray = None  # (B, d) perturbed states

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        if np.any(self.r < 0) or np.any(self.r > 1):
            raise ValueError("verified weights must lie in [0, 1]")
        if not np.allclose(self.y.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("label rows must sum to 1")

    @property
    def size(self):
        return self.x.shape[0]

    def copy(self):
        return AugmentedBatch(
            self.x.copy(), self.y.copy(), self.r.copy(),
            None if self.t is None else self.t.copy(),
            None if self.x_t is None else self.x_t.copy(),
        )


@dataclass
class AugmentConfig:
    """Augmentation knobs for discriminator training."""

    shuffle_rate: float = 0.3
    simix_alpha: float = 0.2
    simix_fraction: float = 0.5
    encoder: object = None            # feature map for neighbor search; identity when None
    t_sampling: str = "discrete"      # "discrete" schedule levels or "continuous"
    time_weight: object = None        # optional w(t) loss weight; uniform when None

    def to_dict(self):
        return {
            "shuffle_rate": self.shuffle_rate,
            "simix_alpha": self.simix_alpha,
            "simix_fraction": self.simix_fraction,
            "encoder": "identity" if self.encoder is None else getattr(
                self.encoder, "__name__", str(self.encoder)),
        }


def adv_loss_from_logits(logits, r, weights=None):
    """Soft binary cross-entropy in stable logit form.

    Per-instance loss is softplus(g) - r * g, which equals
    -[r log D + (1 - r) log(1 - D)] for any real g. Returns
    (per_sample, d/d_logits of the mean).
    """
    logits = np.asarray(logits, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    per = softplus(logits) - r * logits
    grad = sigmoid(logits) - r
    if weights is not None:
        per = per * weights
        grad = grad * weights
    return per, grad / logits.shape[0]


def adv_loss(disc, batch: AugmentedBatch):
    """Mean adversarial loss of a prepared batch (x_t, y, r, t set)."""
    if batch.size == 0:
        raise ValueError("empty batch")
    if batch.x_t is None or batch.t is None:
        raise ValueError("batch must be perturbed (x_t, t) before the loss")
    logits = disc.logit(batch.x_t, batch.y, batch.t)
    per, _ = adv_loss_from_logits(logits, batch.r)
    return float(per.mean())


def pseudo_clean_shuffle(batch: AugmentedBatch, shuffle_rate, n_classes, seed=0):
    """Relabel a fraction of pseudo-clean instances to random wrong classes.

    Selected instances (r == 1, hit with probability shuffle_rate) receive a
    uniformly random label different from their current one and r drops to 0.
    Instances with r == 0 are untouched.
    """
    if not 0.0 <= shuffle_rate <= 1.0:
        raise ValueError(f"shuffle rate must lie in [0, 1], got {shuffle_rate}")
    if n_classes < 2:
        raise ValueError("pseudo-clean shuffle needs at least 2 classes")
    out = batch.copy()
    if shuffle_rate == 0.0 or out.size == 0:
        return out
    rng = np.random.default_rng(seed)
    clean = out.r == 1.0
    hit = clean & (rng.random(out.size) < shuffle_rate)
    idx = np.flatnonzero(hit)
    if idx.size:
        cur = out.y[idx].argmax(axis=1)
        offset = rng.integers(1, n_classes, size=idx.size)
        new = (cur + offset) % n_classes
        out.y[idx] = 0.0
        out.y[idx, new] = 1.0
        out.r[idx] = 0.0
    return out


def nearest_neighbor_indices(feats):
    """Per-row index of the closest other row under Euclidean distance."""
    from scipy.spatial.distance import cdist

    d = cdist(feats, feats)
    np.fill_diagonal(d, np.inf)
    return d.argmin(axis=1)


def mix_instances(batch: AugmentedBatch, sel, partners, lam):
    """Convexly blend selected instances with partners at the given weights.

    Partners come from the pre-mix batch, so blending is order-independent.
    """
    sel = np.asarray(sel, dtype=np.int64)
    partners = np.asarray(partners, dtype=np.int64)
    lam = np.asarray(lam, dtype=np.float64)
    out = batch.copy()
    out.x[sel] = lam[:, None] * batch.x[sel] + (1 - lam)[:, None] * batch.x[partners]
    out.y[sel] = lam[:, None] * batch.y[sel] + (1 - lam)[:, None] * batch.y[partners]
    out.r[sel] = lam * batch.r[sel] + (1 - lam) * batch.r[partners]
    return out


def simix(batch: AugmentedBatch, alpha=0.2, mix_fraction=0.5, encoder=None, seed=0):
    """Similarity-based mixup: blend instances with their feature-space neighbor.

    A mix_fraction share of the batch is selected at random; each selected
    instance i is replaced by lam * z_i + (1 - lam) * z_j with lam ~
    Beta(alpha, alpha) and j the nearest other instance in encoder space.
    Coordinates, label rows, and verified weights all mix convexly.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if batch.size < 2:
        raise ValueError("SiMix needs at least 2 instances")
    rng = np.random.default_rng(seed)
    n_mix = int(round(mix_fraction * batch.size))
    if n_mix == 0:
        return batch.copy()
    sel = rng.choice(batch.size, size=n_mix, replace=False)
    feats = batch.x if encoder is None else np.asarray(encoder(batch.x), dtype=np.float64)
    nn_idx = nearest_neighbor_indices(feats)
    lam = rng.beta(alpha, alpha, size=n_mix)
    return mix_instances(batch, sel, nn_idx[sel], lam)


def train_discriminator(disc: DiscriminatorModel, clean, corrupt,
                        aug: AugmentConfig = None, config: TrainConfig = None,
                        seed=0):
    """Adversarial training on (x, y) pools flagged pseudo-clean / pseudo-corrupt.

    ``clean`` and ``corrupt`` are (x, labels) tuples. Batches are drawn
    uniformly from the union (so pool sizes set the mixing proportions), then
    shuffled/mixed per the augmentation config, perturbed at per-instance
    noise levels, and scored with the soft cross-entropy. The corrupt pool may
    start empty only if the shuffle rate is positive.
    """
    aug = aug or AugmentConfig()
    config = config or TrainConfig(steps=2000, batch_size=128, lr=1e-3)
    cx, cy = np.asarray(clean[0], dtype=np.float64), np.asarray(clean[1], dtype=np.int64)
    fx, fy = np.asarray(corrupt[0], dtype=np.float64), np.asarray(corrupt[1], dtype=np.int64)
    if cx.shape[0] == 0:
        raise ValueError("pseudo-clean pool is empty")
    if fx.shape[0] == 0 and aug.shuffle_rate == 0.0:
        raise ValueError("pseudo-corrupt pool is empty and shuffle rate is 0")
    if config.steps == 0:
        return disc, LossTrace()

    pool_x = np.concatenate([cx, fx]) if fx.size else cx
    pool_y = np.concatenate([cy, fy]) if fy.size else cy
    pool_r = np.concatenate([np.ones(cx.shape[0]), np.zeros(fx.shape[0])])
    k = disc.n_classes
    sched = disc.schedule
    levels = sched.sampling_times()[: sched.steps]

    rng = np.random.default_rng(seed)
    opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    params = disc.net.params_flat()
    ema = params.copy() if config.ema_decay > 0 else None
    trace = LossTrace()
    smooth = None

    for step in range(config.steps):
        idx = rng.integers(0, pool_x.shape[0], size=config.batch_size)
        batch = AugmentedBatch(
            pool_x[idx],
            as_label_matrix(pool_y[idx], k, config.batch_size),
            pool_r[idx],
        )
        if aug.shuffle_rate > 0 and k >= 2:
            batch = pseudo_clean_shuffle(batch, aug.shuffle_rate, k,
                                         seed=rng.integers(2**63))
        if aug.simix_fraction > 0 and batch.size >= 2:
            batch = simix(batch, aug.simix_alpha, aug.simix_fraction,
                          aug.encoder, seed=rng.integers(2**63))
        if aug.t_sampling == "discrete":
            batch.t = levels[rng.integers(0, levels.shape[0], size=batch.size)]
        else:
            lo, hi = np.log(sched.t_min), np.log(sched.t_max)
            batch.t = np.exp(rng.uniform(lo, hi, size=batch.size))
        a, s = sched.scale_and_noise(batch.t)
        noise = rng.standard_normal(batch.x.shape)
        batch.x_t = a[:, None] * batch.x + s[:, None] * noise

        weights = None if aug.time_weight is None else aug.time_weight(batch.t)
        inp, _, _ = disc._net_input(batch.x_t, batch.y, batch.t)

        def loss_fn(out):
            per, grad = adv_loss_from_logits(out[:, 0], batch.r, weights)
            return per, grad[:, None]

        try:
            loss, grads, _ = disc.net.value_and_grad(inp, loss_fn)
        except NonFiniteError as err:
            raise TrainingDiverged(
                f"discriminator training diverged at step {step}", step) from err
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"discriminator training diverged at step {step}", step)

        frac = step / max(config.steps - 1, 1)
        lr = config.lr * (1.0 + frac * (config.lr_decay - 1.0))
        params = opt.update(params, flatten_grads(grads), lr=lr)
        disc.net.set_params_flat(params)
        if ema is not None:
            ema += (1.0 - config.ema_decay) * (params - ema)

        smooth = loss if smooth is None else 0.98 * smooth + 0.02 * loss
        if step % config.trace_every == 0 or step == config.steps - 1:
            trace.append(step, loss, smooth)

    if ema is not None:
        disc.net.set_params_flat(ema)
    return disc, trace
