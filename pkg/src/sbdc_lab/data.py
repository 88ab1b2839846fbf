"""Synthetic 2D labeled datasets and the three label-corruption operators.

All corruption operators preserve coordinates and true labels and only
rewrite the observed label column, drawing every random quantity from one
seeded generator so runs reproduce exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

R_CLEAN = 1.0
R_CORRUPT = 0.0


@dataclass
class Dataset2D:
    """Structure-of-arrays dataset: coordinates, true/observed labels, verdicts.

    ``r`` holds the soft verified weight per point (1 pseudo-clean, 0
    pseudo-corrupt, NaN unknown).
    """

    x: np.ndarray                 # (n, 2)
    y_true: np.ndarray            # (n,)
    y_obs: np.ndarray             # (n,)
    n_classes: int
    r: np.ndarray = None          # (n,) float with NaN = unknown

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, 2)
        self.y_true = np.asarray(self.y_true, dtype=np.int64)
        self.y_obs = np.asarray(self.y_obs, dtype=np.int64)
        n = self.x.shape[0]
        if self.y_true.shape != (n,) or self.y_obs.shape != (n,):
            raise ValueError("label arrays must match the number of points")
        for name, arr in (("y_true", self.y_true), ("y_obs", self.y_obs)):
            if n and (arr.min() < 0 or arr.max() >= self.n_classes):
                raise ValueError(f"{name} outside [0, {self.n_classes})")
        if self.r is None:
            self.r = np.full(n, np.nan)
        else:
            self.r = np.asarray(self.r, dtype=np.float64)
            known = self.r[~np.isnan(self.r)]
            if known.size and (known.min() < 0 or known.max() > 1):
                raise ValueError("soft verified weights must lie in [0, 1]")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def corrupt_mask(self):
        return self.y_obs != self.y_true

    @property
    def flip_fraction(self):
        return float(self.corrupt_mask.mean()) if self.n else 0.0

    def subset(self, idx):
        return Dataset2D(self.x[idx], self.y_true[idx], self.y_obs[idx],
                         self.n_classes, self.r[idx])

    def with_r(self, r):
        return Dataset2D(self.x, self.y_true, self.y_obs, self.n_classes, r)

    def copy(self):
        return Dataset2D(self.x.copy(), self.y_true.copy(), self.y_obs.copy(),
                         self.n_classes, self.r.copy())


def make_two_moons(n, noise_std=0.1, seed=0):
    """Two interleaved half-circles, balanced up to one point.

    Class 0 sits on the upper unit half-circle centered at the origin; class 1
    on the lower arc shifted to interleave. Arc positions are evenly spaced,
    so with noise_std=0 the geometry is exact.
    """
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    n0 = n // 2
    n1 = n - n0
    th0 = np.linspace(0.0, np.pi, n0)
    th1 = np.linspace(0.0, np.pi, n1)
    x0 = np.stack([np.cos(th0), np.sin(th0)], axis=1)
    x1 = np.stack([1.0 - np.cos(th1), 0.5 - np.sin(th1)], axis=1)
    x = np.concatenate([x0, x1])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, noise_std, size=x.shape)
    return Dataset2D(x, y, y.copy(), n_classes=2)


def two_moons_reference(n):
    """Noiseless on-arc points (x, labels) for oracle classifiers."""
    ds = make_two_moons(max(n, 2), noise_std=0.0, seed=0)
    return ds.x, ds.y_true


def make_gaussian_mixture(n_classes, means, cov, n, seed=0, weights=None):
    """Sample a labeled isotropic/general Gaussian mixture; labels = component."""
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] != n_classes:
        raise ValueError(f"expected {n_classes} means, got {means.shape[0]}")
    if n_classes < 2:
        raise ValueError("need at least 2 components")
    for i in range(n_classes):
        for j in range(i + 1, n_classes):
            if np.allclose(means[i], means[j]):
                raise ValueError(f"component means {i} and {j} coincide")
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(2)
    if np.linalg.det(cov) <= 0:
        raise ValueError("covariance must be positive definite")
    rng = np.random.default_rng(seed)
    if weights is None:
        weights = np.full(n_classes, 1.0 / n_classes)
    y = rng.choice(n_classes, size=n, p=weights).astype(np.int64)
    chol = np.linalg.cholesky(cov)
    x = means[y] + rng.standard_normal((n, 2)) @ chol.T
    return Dataset2D(x, y, y.copy(), n_classes=n_classes)


def gaussian_mixture_density(x, means, cov, weights=None):
    """Closed-form mixture density at query points (B, 2)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
    means = np.asarray(means, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(2)
    k = means.shape[0]
    if weights is None:
        weights = np.full(k, 1.0 / k)
    inv = np.linalg.inv(cov)
    norm = 1.0 / (2.0 * np.pi * np.sqrt(np.linalg.det(cov)))
    dens = np.zeros(x.shape[0])
    for c in range(k):
        d = x - means[c]
        q = np.einsum("bi,ij,bj->b", d, inv, d)
        dens += weights[c] * norm * np.exp(-0.5 * q)
    return dens


# -- label corruption ---------------------------------------------------------

def apply_symmetric_noise(dataset, rate, seed=0):
    """Replace a rate-fraction of labels with a uniform draw over all K classes.

    The replacement may equal the original, so the expected flip fraction is
    rate * (K-1) / K.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    out = dataset.copy()
    if rate == 0.0 or out.n == 0:
        return out
    rng = np.random.default_rng(seed)
    hit = rng.random(out.n) < rate
    out.y_obs[hit] = rng.integers(0, out.n_classes, size=int(hit.sum()))
    return out


def apply_asymmetric_noise(dataset, rate, flip_map, seed=0):
    """Flip each label to flip_map[y_true] with probability rate."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    fm = np.asarray([flip_map[c] for c in range(dataset.n_classes)], dtype=np.int64)
    if fm.min() < 0 or fm.max() >= dataset.n_classes:
        raise ValueError("flip map targets outside the class range")
    out = dataset.copy()
    if out.n == 0:
        return out
    rng = np.random.default_rng(seed)
    hit = rng.random(out.n) < rate
    out.y_obs[hit] = fm[out.y_true[hit]]
    return out


def truncated_normal(mean, std, low, high, size, rng):
    """Rejection-sampled normal restricted to [low, high]."""
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        draw = rng.normal(mean, std, size=pending.size)
        ok = (draw >= low) & (draw <= high)
        out[pending[ok]] = draw[ok]
        pending = pending[~ok]
    return out


def idn_flip_probabilities(dataset, rate, seed=0):
    """Instance-dependent flip distribution per point.

    Returns (P, q, w): P[i] is the categorical distribution the noisy label is
    drawn from (P[i, y_true_i] = 1 - q_i), q the per-instance flip rates from
    a truncated normal around ``rate``, and w the per-class (2, K) projection
    matrices scoring each point against every class.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    n, k = dataset.n, dataset.n_classes
    q = truncated_normal(rate, 0.1, 0.0, 1.0, n, rng)
    w = rng.standard_normal((k, 2, k))
    probs = np.empty((n, k))
    for c in range(k):
        mask = dataset.y_true == c
        if not np.any(mask):
            continue
        logits = dataset.x[mask] @ w[c]            # (m, K)
        logits[:, c] = -np.inf
        logits -= logits.max(axis=1, keepdims=True)
        soft = np.exp(logits)
        soft /= soft.sum(axis=1, keepdims=True)
        block = q[mask, None] * soft
        block[:, c] = 1.0 - q[mask]
        probs[mask] = block
    return probs, q, w


def apply_idn_noise(dataset, rate, seed=0):
    """Instance-dependent corruption: flip rates and targets depend on x."""
    out = dataset.copy()
    if out.n == 0:
        return out
    probs, _, _ = idn_flip_probabilities(dataset, rate, seed=seed)
    rng = np.random.default_rng([seed, 1])
    u = rng.random(out.n)
    cum = np.cumsum(probs, axis=1)
    out.y_obs = (u[:, None] < cum).argmax(axis=1).astype(np.int64)
    return out


NOISE_KINDS = ("none", "symmetric", "asymmetric", "instance_dependent")


def apply_noise(dataset, kind, rate, seed=0, flip_map=None):
    """Dispatch on the corruption kind; unknown kinds list the valid ones."""
    if kind == "none":
        return dataset.copy()
    if kind == "symmetric":
        return apply_symmetric_noise(dataset, rate, seed=seed)
    if kind == "asymmetric":
        if flip_map is None:
            flip_map = {c: (c + 1) % dataset.n_classes for c in range(dataset.n_classes)}
            if dataset.n_classes == 2:
                flip_map = {0: 1, 1: 0}
        return apply_asymmetric_noise(dataset, rate, flip_map, seed=seed)
    if kind == "instance_dependent":
        return apply_idn_noise(dataset, rate, seed=seed)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


# -- CSV round trip ------------------------------------------------------------

CSV_HEADER = "x0,x1,y_true,y_obs,r"


def save_dataset_csv(path, dataset):
    """Write the dataset as CSV at 17 significant digits; r blank when unknown."""
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(dataset.n):
            r = dataset.r[i]
            r_txt = "" if np.isnan(r) else f"{r:.17g}"
            fh.write(
                f"{dataset.x[i, 0]:.17g},{dataset.x[i, 1]:.17g},"
                f"{dataset.y_true[i]:d},{dataset.y_obs[i]:d},{r_txt}\n"
            )


def load_dataset_csv(path, n_classes=None):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected dataset header {header!r}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    n = len(rows)
    x = np.empty((n, 2))
    y_true = np.empty(n, dtype=np.int64)
    y_obs = np.empty(n, dtype=np.int64)
    r = np.full(n, np.nan)
    for i, row in enumerate(rows):
        x[i, 0], x[i, 1] = float(row[0]), float(row[1])
        y_true[i], y_obs[i] = int(row[2]), int(row[3])
        if row[4] != "":
            r[i] = float(row[4])
    if n_classes is None:
        n_classes = int(max(y_true.max(initial=0), y_obs.max(initial=0)) + 1)
    return Dataset2D(x, y_true, y_obs, n_classes, r)
