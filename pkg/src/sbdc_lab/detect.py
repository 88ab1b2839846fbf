"""Noise detectors: split a noisy dataset into pseudo-clean and pseudo-corrupt.

Two detectors are provided. The confidence detector trains a small softmax
classifier on the observed labels and flags points whose observed-label
confidence stays low over the final third of the epochs (the small-loss
criterion). The oracle-with-errors detector starts from ground truth and
deliberately flips verdicts at requested per-point rates, reproducing
controlled-imperfection experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import one_hot
from .nn import AdamState, DenseNetwork, flatten_grads

VERDICT_CLEAN = "clean"
VERDICT_CORRUPT = "corrupt"


@dataclass
class DetectorReport:
    """Per-point verdicts with optional quality scores against ground truth."""

    corrupt: np.ndarray            # (n,) bool, True = flagged corrupt
    kind: str
    scores: np.ndarray = None      # (n,) detector confidence, lower = more suspect
    threshold: float = None
    precision: float = None
    recall: float = None
    f1: float = None

    @property
    def n(self):
        return self.corrupt.shape[0]

    @property
    def flagged_fraction(self):
        return float(self.corrupt.mean()) if self.n else 0.0

    def verdicts(self):
        return np.where(self.corrupt, VERDICT_CORRUPT, VERDICT_CLEAN)

    def save(self, csv_path, json_path=None):
        with open(csv_path, "w") as fh:
            fh.write("index,verdict\n")
            for i, v in enumerate(self.verdicts()):
                fh.write(f"{i},{v}\n")
        if json_path is not None:
            summary = {
                "detector": self.kind,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "flagged_fraction": self.flagged_fraction,
            }
            with open(json_path, "w") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)

    @classmethod
    def load_csv(cls, path, kind="loaded"):
        corrupt = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "index,verdict":
                raise ValueError(f"unexpected report header {header!r}")
            for line in fh:
                if line.strip():
                    _, verdict = line.strip().split(",")
                    corrupt.append(verdict == VERDICT_CORRUPT)
        return cls(np.array(corrupt, dtype=bool), kind=kind)


def score_detector(report_or_mask, dataset):
    """(precision, recall, f1) with corrupt as the positive class.

    Undefined ratios (zero denominators) come back as None rather than 0.
    """
    if isinstance(report_or_mask, DetectorReport):
        flagged = report_or_mask.corrupt
    else:
        flagged = np.asarray(report_or_mask, dtype=bool)
    truth = dataset.corrupt_mask
    tp = int(np.sum(flagged & truth))
    fp = int(np.sum(flagged & ~truth))
    fn = int(np.sum(~flagged & truth))
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = None
    return precision, recall, f1


def _fill_quality(report, dataset):
    if dataset.y_true is not None:
        p, r, f1 = score_detector(report, dataset)
        report.precision, report.recall, report.f1 = p, r, f1
    return report


# -- confidence detector -----------------------------------------------------------

def observed_label_confidences(dataset, epochs=40, hidden=(32, 32), lr=5e-3,
                               batch_size=128, seed=0):
    """Mean observed-label softmax confidence over the final third of training.

    Trains a small classifier on (x, y_obs) and records each point's
    confidence in its observed label after every epoch.
    """
    classes = np.unique(dataset.y_obs)
    if classes.size < 2:
        raise ValueError("confidence detection needs at least 2 observed classes")
    k = dataset.n_classes
    rng = np.random.default_rng(seed)
    net = DenseNetwork((2, *hidden, k), seed=int(rng.integers(2**31)))
    opt = AdamState(lr=lr)
    params = net.params_flat()
    y_hot = one_hot(dataset.y_obs, k)
    tail = max(epochs - epochs // 3, 0)
    conf_sum = np.zeros(dataset.n)
    conf_count = 0

    for epoch in range(epochs):
        order = rng.permutation(dataset.n)
        for s in range(0, dataset.n, batch_size):
            idx = order[s : s + batch_size]
            xb, yb = dataset.x[idx], y_hot[idx]

            def loss_fn(out):
                shifted = out - out.max(axis=1, keepdims=True)
                logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
                logp = shifted - logz
                per = -(yb * logp).sum(axis=1)
                grad = (np.exp(logp) - yb) / out.shape[0]
                return per, grad

            _, grads, _ = net.value_and_grad(xb, loss_fn)
            params = opt.update(params, flatten_grads(grads))
            net.set_params_flat(params)
        if epoch >= tail:
            logits = net.forward(dataset.x)
            shifted = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            conf_sum += p[np.arange(dataset.n), dataset.y_obs]
            conf_count += 1
    return conf_sum / max(conf_count, 1)


def threshold_from_policy(confidences, policy):
    """Resolve a flagging threshold from ("quantile", q) or ("valley",).

    The valley policy histograms the confidences and thresholds at the
    deepest interior minimum between the outermost modes; when the histogram
    has no interior valley it falls back to an absolute 0.5 cutoff.
    """
    kind = policy[0]
    if kind == "quantile":
        return float(np.quantile(confidences, policy[1]))
    if kind != "valley":
        raise ValueError(f"unknown threshold policy {policy!r}")
    counts, edges = np.histogram(confidences, bins=20, range=(0.0, 1.0))
    smooth = np.convolve(counts, np.ones(3) / 3.0, mode="same")
    peaks = [i for i in range(1, 19) if smooth[i] >= smooth[i - 1] and smooth[i] >= smooth[i + 1]]
    if smooth[0] > smooth[1]:
        peaks.insert(0, 0)
    if smooth[19] > smooth[18]:
        peaks.append(19)
    if len(peaks) >= 2:
        lo, hi = peaks[0], peaks[-1]
        if hi - lo >= 2:
            valley = lo + 1 + int(np.argmin(smooth[lo + 1 : hi]))
            return float(edges[valley + 1])
    return 0.5


def detect_confidence(dataset, epochs=40, policy=("valley",), seed=0,
                      hidden=(32, 32), lr=5e-3, batch_size=128):
    """Small-loss style detector: low sustained confidence means corrupt."""
    conf = observed_label_confidences(dataset, epochs=epochs, hidden=hidden,
                                      lr=lr, batch_size=batch_size, seed=seed)
    thr = threshold_from_policy(conf, policy)
    report = DetectorReport(corrupt=conf < thr, kind="confidence",
                            scores=conf, threshold=thr)
    return _fill_quality(report, dataset)


# -- oracle with controlled errors ----------------------------------------------

def detect_oracle_with_errors(dataset, clean_contamination_ratio,
                              corrupt_contamination_ratio, seed=0):
    """Ground-truth verdicts with deliberate per-point flips.

    Each truly corrupt point is misfiled as clean with probability
    ``clean_contamination_ratio``; each truly clean point is misfiled as
    corrupt with probability ``corrupt_contamination_ratio``. On a balanced
    half/half corruption this makes the wrong-point share of each pool equal
    the requested ratio in expectation.
    """
    for name, v in (("clean", clean_contamination_ratio),
                    ("corrupt", corrupt_contamination_ratio)):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"{name} contamination ratio must lie in [0, 1), got {v}")
    rng = np.random.default_rng(seed)
    truth = dataset.corrupt_mask.copy()
    flagged = truth.copy()
    to_clean = truth & (rng.random(dataset.n) < clean_contamination_ratio)
    to_corrupt = (~truth) & (rng.random(dataset.n) < corrupt_contamination_ratio)
    flagged[to_clean] = False
    flagged[to_corrupt] = True
    report = DetectorReport(corrupt=flagged, kind="oracle_with_errors")
    return _fill_quality(report, dataset)


def split_by_report(dataset, report):
    """(clean (x, y_obs), corrupt (x, y_obs)) pools from the verdicts."""
    c = ~report.corrupt
    return ((dataset.x[c], dataset.y_obs[c]),
            (dataset.x[report.corrupt], dataset.y_obs[report.corrupt]))
