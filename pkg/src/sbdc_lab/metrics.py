"""Diagnostics: oracle classifier, phase curves, and sample-quality metrics.

The Frechet metric here is the exact 2-Wasserstein distance between Gaussians
fit to raw 2D coordinates (no learned embedding), so its numbers are on the
coordinate scale, not comparable to image-domain scores. Density and coverage
are the usual k-NN manifold definitions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .data import two_moons_reference
from .sampler import heun_sample_batch


# -- oracle classifier ---------------------------------------------------------

class BayesClassifier:
    """Posterior-argmax classifier from analytic class-conditional densities.

    Built either from closed-form Gaussian mixture components or from a
    fixed-bandwidth Gaussian KDE over a deterministic noiseless reference set
    (the two-moons case). Ties break toward the lower class index.
    """

    def __init__(self, log_density_fn, n_classes, priors=None):
        self._log_density_fn = log_density_fn
        self.n_classes = int(n_classes)
        if priors is None:
            priors = np.full(self.n_classes, 1.0 / self.n_classes)
        self.priors = np.asarray(priors, dtype=np.float64)

    @classmethod
    def from_gaussian_mixture(cls, means, cov, priors=None):
        means = np.asarray(means, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(2)
        inv = np.linalg.inv(cov)
        logdet = np.log(np.linalg.det(cov))

        def log_density(x):
            x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
            out = np.empty((x.shape[0], means.shape[0]))
            for c in range(means.shape[0]):
                d = x - means[c]
                q = np.einsum("bi,ij,bj->b", d, inv, d)
                out[:, c] = -0.5 * q - 0.5 * logdet - np.log(2.0 * np.pi)
            return out

        return cls(log_density, means.shape[0], priors)

    @classmethod
    def for_two_moons(cls, bandwidth=0.1, n_reference=50_000):
        """KDE oracle on evenly spaced noiseless arc points (deterministic)."""
        ref_x, ref_y = two_moons_reference(n_reference)
        refs = [ref_x[ref_y == c] for c in (0, 1)]
        h2 = bandwidth * bandwidth
        log_norm = -np.log(2.0 * np.pi * h2)

        def log_density(x):
            x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
            out = np.empty((x.shape[0], 2))
            chunk = 2048
            for c, ref in enumerate(refs):
                logm = np.log(ref.shape[0])
                for s in range(0, x.shape[0], chunk):
                    d2 = cdist(x[s : s + chunk], ref, "sqeuclidean")
                    m = -0.5 * d2 / h2
                    mx = m.max(axis=1)
                    out[s : s + chunk, c] = (
                        mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))
                        + log_norm - logm
                    )
            return out

        return cls(log_density, 2)

    def log_posterior(self, x):
        logp = self._log_density_fn(x) + np.log(self.priors)
        return logp

    def posterior(self, x):
        logp = self.log_posterior(x)
        logp = logp - logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, x):
        return self.log_posterior(x).argmax(axis=1)

    def error_rate(self, x, y_true):
        """Misclassification fraction of this oracle on labeled points."""
        return float((self.predict(x) != np.asarray(y_true)).mean())


# -- phase curves ----------------------------------------------------------------

@dataclass
class PhaseCurves:
    """Confidence C(t) and instability I(t) over the sampling step levels.

    C has one entry per sampling step (evaluated at each step's current
    level); I compares consecutive steps so it is one shorter.
    """

    ts: np.ndarray            # (N,) levels, descending
    confidence: np.ndarray    # (N,)
    instability: np.ndarray   # (N-1,)
    n_chains: int
    steps: np.ndarray = None  # countdown step numbers, (N,)

    def __post_init__(self):
        if self.steps is None:
            n = self.ts.shape[0]
            self.steps = np.arange(n, 0, -1)

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,t,confidence,instability\n")
            for i in range(self.ts.shape[0]):
                inst = f"{self.instability[i]:.17g}" if i < self.instability.shape[0] else ""
                fh.write(f"{self.steps[i]:d},{self.ts[i]:.17g},"
                         f"{self.confidence[i]:.17g},{inst}\n")

    @classmethod
    def load_csv(cls, path):
        rows = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "step,t,confidence,instability":
                raise ValueError(f"unexpected phase-curve header {header!r}")
            for line in fh:
                if line.strip():
                    rows.append(line.rstrip("\n").split(","))
        steps = np.array([int(r[0]) for r in rows])
        ts = np.array([float(r[1]) for r in rows])
        conf = np.array([float(r[2]) for r in rows])
        inst = np.array([float(r[3]) for r in rows if r[3] != ""])
        return cls(ts, conf, inst, n_chains=0, steps=steps)


def measure_phase_curves(score_model, n_classes, n_chains, seed, classifier,
                         hook=None):
    """Run reverse chains and track per-step oracle classifications.

    Conditioning labels are drawn uniformly per chain; at every step the
    denoised estimate is classified, confidence is agreement with the
    conditioning label, instability the step-to-step prediction change.
    """
    if n_chains < 1:
        raise ValueError("need at least one chain")
    rng = np.random.default_rng([seed, 0x1ABE15])
    labels = rng.integers(0, n_classes, size=n_chains)
    traj = heun_sample_batch(score_model, labels, seed=seed, hook=hook)
    n = traj.ts.shape[0] - 1          # sampling steps
    preds = np.empty((n, n_chains), dtype=np.int64)
    for i in range(n):
        preds[i] = classifier.predict(traj.x0s[i])
    conf = (preds == labels[None, :]).mean(axis=1)
    inst = (preds[1:] != preds[:-1]).mean(axis=1)
    return PhaseCurves(ts=traj.ts[:n].copy(), confidence=conf, instability=inst,
                       n_chains=n_chains)


@dataclass
class IntervalSuggestion:
    s_clip_min: float
    s_clip_max: float
    fired_steps: list            # countdown step numbers that would fire
    flat: bool
    curves: PhaseCurves


def suggest_interval(curves: PhaseCurves, fraction=0.5):
    """Heuristic gate interval from the instability curve.

    Takes the smallest level-interval containing every step adjacent to an
    instability value >= fraction * max, padded one step on each side. Flat
    curves produce the full range plus a warning.
    """
    inst = curves.instability
    ts = curves.ts
    if inst.size == 0 or np.allclose(inst, inst[0]):
        warnings.warn("instability curve is flat; suggesting the full range")
        return IntervalSuggestion(
            s_clip_min=0.0, s_clip_max=float(ts[0]),
            fired_steps=list(curves.steps), flat=True, curves=curves)
    peak = inst.max()
    hot = np.flatnonzero(inst >= fraction * peak)
    lo_level = max(int(hot.min()) - 1, 0)                # earliest firing step index
    hi_level = min(int(hot.max()) + 1, ts.shape[0] - 1)  # latest firing step index
    s_max = float(ts[lo_level])
    if hi_level + 1 < ts.shape[0]:
        s_min = float(np.sqrt(ts[hi_level] * ts[hi_level + 1]))
    else:
        s_min = float(ts[hi_level] * 0.5)
    fired = [int(curves.steps[i]) for i in range(lo_level, hi_level + 1)]
    return IntervalSuggestion(s_clip_min=s_min, s_clip_max=s_max,
                              fired_steps=fired, flat=False, curves=curves)


# -- distributional metrics -------------------------------------------------------

def _sym_sqrtm(mat):
    """Matrix square root of a symmetric PSD matrix via eigendecomposition."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def gaussian_frechet(samples_a, samples_b, with_info=False):
    """Exact 2-Wasserstein distance between Gaussian fits of two point sets."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.shape[0] < 3 or b.shape[0] < 3:
        raise ValueError("need at least 3 points per set to fit moments")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    value, info = frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
    return (value, info) if with_info else value


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b):
    """Squared-mean-shift plus covariance term; regularizes degenerate fits."""
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    regularized = False
    for cov in (cov_a, cov_b):
        if np.linalg.eigvalsh(cov).min() <= 0:
            regularized = True
    if regularized:
        eye = np.eye(cov_a.shape[0])
        cov_a = cov_a + 1e-10 * eye
        cov_b = cov_b + 1e-10 * eye
    root_a = _sym_sqrtm(cov_a)
    cross = _sym_sqrtm(root_a @ cov_b @ root_a)
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    value = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * cross))
    return max(value, 0.0), {"regularized": regularized}


def knn_density_coverage(real, gen, k):
    """Manifold density and coverage with k-NN balls around the real points.

    density: mean over generated points of (number of real k-NN balls that
    contain it) / k. coverage: fraction of real points whose ball contains at
    least one generated point. Ball radii exclude the point itself.
    """
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= real.shape[0]:
        raise ValueError(f"k={k} needs more than k real points, got {real.shape[0]}")
    d_real = cdist(real, real)
    np.fill_diagonal(d_real, np.inf)
    radii = np.sort(d_real, axis=1)[:, k - 1]
    d_rg = cdist(real, gen)
    inside = d_rg < radii[:, None]
    density = float(inside.sum(axis=0).mean() / k) if gen.shape[0] else 0.0
    coverage = float(inside.any(axis=1).mean())
    return density, coverage


def classwise_metrics(real_dataset, gen_x, gen_labels, k, classifier):
    """Per-class quality table plus label purity and the confusion matrix.

    Real points group by their true labels; generated points by conditioning
    label. Purity is the fraction whose oracle classification matches the
    conditioning label; confusion rows are conditioning labels, columns oracle
    labels. Classes absent from the generated set get a marked-absent row.
    """
    gen_x = np.asarray(gen_x, dtype=np.float64)
    gen_labels = np.asarray(gen_labels, dtype=np.int64)
    kk = real_dataset.n_classes
    for c in range(kk):
        if not np.any(real_dataset.y_true == c):
            raise ValueError(f"class {c} missing from the real set")
    bayes = classifier.predict(gen_x) if gen_x.shape[0] else np.empty(0, dtype=np.int64)
    purity = float((bayes == gen_labels).mean()) if gen_x.shape[0] else float("nan")
    confusion = np.zeros((kk, kk), dtype=np.int64)
    for cond, pred in zip(gen_labels, bayes):
        confusion[cond, pred] += 1

    per_class = {}
    regularized = False
    for c in range(kk):
        real_c = real_dataset.x[real_dataset.y_true == c]
        gen_c = gen_x[gen_labels == c]
        if gen_c.shape[0] < 3:
            per_class[c] = {"absent": True, "count": int(gen_c.shape[0])}
            continue
        fd, info = gaussian_frechet(real_c, gen_c, with_info=True)
        regularized = regularized or info["regularized"]
        den, cov = knn_density_coverage(real_c, gen_c, k)
        per_class[c] = {
            "absent": False, "count": int(gen_c.shape[0]),
            "frechet": fd, "density": den, "coverage": cov,
        }
    present = [v for v in per_class.values() if not v["absent"]]
    agg = {
        "cw_frechet": float(np.mean([v["frechet"] for v in present])) if present else float("nan"),
        "cw_density": float(np.mean([v["density"] for v in present])) if present else float("nan"),
        "cw_coverage": float(np.mean([v["coverage"] for v in present])) if present else float("nan"),
    }
    return {
        "purity": purity,
        "confusion": confusion.tolist(),
        "per_class": per_class,
        "aggregate": agg,
        "metadata": {"k": int(k), "frechet_regularized": regularized},
    }


def metrics_report(real_dataset, gen_x, gen_labels, k, classifier):
    """Pooled + class-wise metrics in the JSON report layout."""
    cw = classwise_metrics(real_dataset, gen_x, gen_labels, k, classifier)
    fd, info = gaussian_frechet(real_dataset.x, gen_x, with_info=True)
    den, cov = knn_density_coverage(real_dataset.x, gen_x, k)
    return {
        "frechet": fd,
        "density": den,
        "coverage": cov,
        "purity": cw["purity"],
        "cw": {str(c): cw["per_class"][c] for c in cw["per_class"]},
        "cw_aggregate": cw["aggregate"],
        "confusion": cw["confusion"],
        "metadata": {
            "k": int(k),
            "frechet_regularized": info["regularized"] or cw["metadata"]["frechet_regularized"],
        },
    }
