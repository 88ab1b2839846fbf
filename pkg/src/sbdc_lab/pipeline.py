"""End-to-end run orchestration with per-stage artifacts and a hash manifest.

Stage order: generate -> train-score -> detect -> train-disc -> sample
(guided and unguided) -> analyze -> plot. Every stage persists its outputs
under the run directory and later stages reload them, so each stage is
independently resumable. The manifest records SHA-256 hashes of every
artifact; a rerun of the same config reproduces identical hashes.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .data import (Dataset2D, apply_noise, load_dataset_csv, make_gaussian_mixture,
                   make_two_moons, save_dataset_csv)
from .detect import (DetectorReport, detect_confidence, detect_oracle_with_errors,
                     split_by_report)
from .discriminator import DiscriminatorModel, train_discriminator
from .guidance import guided_sample_batch
from .metrics import (BayesClassifier, measure_phase_curves, metrics_report,
                      suggest_interval, PhaseCurves)
from .nn import load_checkpoint, save_checkpoint
from .sampler import heun_sample_batch, save_trajectory_csv
from .score import ScoreModel, train_score
from .svg import line_plot_svg, scatter_plot_svg


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _save_trace_csv(path, trace):
    with open(path, "w") as fh:
        fh.write("step,loss,smoothed,monotone\n")
        for s, l, sm, mo in zip(trace.steps, trace.loss, trace.smoothed, trace.monotone):
            fh.write(f"{s},{l:.17g},{sm:.17g},{mo:.17g}\n")


def _save_samples_csv(path, x, labels):
    with open(path, "w") as fh:
        fh.write("x0,x1,label\n")
        for i in range(x.shape[0]):
            fh.write(f"{x[i,0]:.17g},{x[i,1]:.17g},{labels[i]:d}\n")


def _load_samples_csv(path):
    xs, labels = [], []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            if line.strip():
                a, b, c = line.strip().split(",")
                xs.append((float(a), float(b)))
                labels.append(int(c))
    return np.array(xs), np.array(labels, dtype=np.int64)


def build_classifier(cfg: RunConfig):
    if cfg.dataset.kind == "two_moons":
        return BayesClassifier.for_two_moons()
    means = np.asarray(cfg.dataset.means, dtype=np.float64)
    cov = cfg.dataset.cov * np.eye(2)
    return BayesClassifier.from_gaussian_mixture(means, cov, priors=cfg.dataset.weights)


# -- stages -----------------------------------------------------------------------

def stage_generate(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    ds_cfg = cfg.dataset
    if ds_cfg.kind == "two_moons":
        clean = make_two_moons(ds_cfg.n, ds_cfg.noise_std, seed=cfg.seed)
    else:
        clean = make_gaussian_mixture(
            ds_cfg.n_classes, ds_cfg.means, ds_cfg.cov * np.eye(2), ds_cfg.n,
            seed=cfg.seed, weights=ds_cfg.weights)
    noisy = apply_noise(clean, cfg.noise.kind, cfg.noise.rate,
                        seed=cfg.seed + 100, flip_map=cfg.noise.flip_map)
    save_dataset_csv(out / "clean.csv", clean)
    save_dataset_csv(out / "noisy.csv", noisy)
    _write_json(out / "noise_summary.json", {
        "kind": cfg.noise.kind,
        "rate": cfg.noise.rate,
        "flip_fraction": noisy.flip_fraction,
        "n": noisy.n,
        "n_classes": noisy.n_classes,
    })
    return ["clean.csv", "noisy.csv", "noise_summary.json"]


def _load_noisy(cfg, out, stage):
    path = out / "noisy.csv"
    if not path.exists():
        raise StageError(stage, f"missing input {path}; run generate first")
    return load_dataset_csv(path, n_classes=cfg.dataset.n_classes)


def stage_train_score(cfg: RunConfig, out: Path):
    noisy = _load_noisy(cfg, out, "train-score")
    model = ScoreModel(cfg.schedule, n_classes=noisy.n_classes,
                       hidden=tuple(cfg.score_model.hidden),
                       sigma_data=cfg.score_model.sigma_data, seed=cfg.seed + 1)
    model, trace = train_score(model, noisy, cfg.train_score, seed=cfg.seed + 2)
    save_checkpoint(out / "score_model.json", model.net, role="score",
                    seed=cfg.seed + 1, step_count=cfg.train_score.steps,
                    extra=model.extra_dict())
    _save_trace_csv(out / "score_loss.csv", trace)
    return ["score_model.json", "score_loss.csv"]


def load_score_model(out: Path):
    net, doc = load_checkpoint(out / "score_model.json")
    if doc["role"] != "score":
        raise ValueError(f"checkpoint role {doc['role']!r}, expected 'score'")
    return ScoreModel.from_checkpoint_doc(net, doc)


def load_disc_model(out: Path):
    net, doc = load_checkpoint(out / "disc_model.json")
    if doc["role"] != "discriminator":
        raise ValueError(f"checkpoint role {doc['role']!r}, expected 'discriminator'")
    return DiscriminatorModel.from_checkpoint_doc(net, doc)


def stage_detect(cfg: RunConfig, out: Path):
    noisy = _load_noisy(cfg, out, "detect")
    det = cfg.detector
    rng = np.random.default_rng(cfg.seed + 3)
    if det.train_fraction < 1.0:
        subset_idx = rng.choice(noisy.n, size=int(round(det.train_fraction * noisy.n)),
                                replace=False)
        subset_idx.sort()
    else:
        subset_idx = np.arange(noisy.n)
    subset = noisy.subset(subset_idx)
    if det.kind == "confidence":
        policy = ("valley",) if det.quantile is None else ("quantile", det.quantile)
        report = detect_confidence(subset, epochs=det.epochs, policy=policy,
                                   seed=cfg.seed + 4)
    else:
        report = detect_oracle_with_errors(subset, det.clean_contamination,
                                           det.corrupt_contamination,
                                           seed=cfg.seed + 4)
    report.save(out / "detector_report.csv", out / "detector_summary.json")
    np.savetxt(out / "detector_subset.csv", subset_idx, fmt="%d",
               header="index", comments="")
    return ["detector_report.csv", "detector_summary.json", "detector_subset.csv"]


def stage_train_disc(cfg: RunConfig, out: Path):
    noisy = _load_noisy(cfg, out, "train-disc")
    report_path = out / "detector_report.csv"
    if not report_path.exists():
        raise StageError("train-disc", f"missing input {report_path}; run detect first")
    report = DetectorReport.load_csv(report_path)
    subset_idx = np.loadtxt(out / "detector_subset.csv", skiprows=1, dtype=np.int64)
    subset = noisy.subset(np.atleast_1d(subset_idx))
    clean_pool, corrupt_pool = split_by_report(subset, report)
    disc = DiscriminatorModel(cfg.schedule, n_classes=noisy.n_classes,
                              hidden=tuple(cfg.disc_model.hidden),
                              sigma_data=cfg.disc_model.sigma_data, seed=cfg.seed + 5)
    disc, trace = train_discriminator(disc, clean_pool, corrupt_pool,
                                      aug=cfg.augment, config=cfg.train_disc,
                                      seed=cfg.seed + 6)
    save_checkpoint(out / "disc_model.json", disc.net, role="discriminator",
                    seed=cfg.seed + 5, step_count=cfg.train_disc.steps,
                    extra=disc.extra_dict())
    _save_trace_csv(out / "disc_loss.csv", trace)
    return ["disc_model.json", "disc_loss.csv"]


def stage_sample(cfg: RunConfig, out: Path):
    score = load_score_model(out)
    disc = load_disc_model(out)
    n = cfg.sampling.n_samples
    labels = np.arange(n) % score.n_classes
    unguided = heun_sample_batch(score, labels, seed=cfg.seed + 7)
    guided, gate_trace = guided_sample_batch(score, disc, labels, cfg.guidance,
                                             seed=cfg.seed + 7)
    _save_samples_csv(out / "samples_unguided.csv", unguided.final, labels)
    _save_samples_csv(out / "samples_guided.csv", guided.final, labels)
    gate_trace.save_csv(out / "gate_trace.csv")
    files = ["samples_unguided.csv", "samples_guided.csv", "gate_trace.csv"]
    for i in range(min(cfg.sampling.dump_chains, n)):
        name = f"trajectory_guided_{i}.csv"
        save_trajectory_csv(out / name, guided.chain(i))
        files.append(name)
    return files


def stage_analyze(cfg: RunConfig, out: Path):
    clean_path = out / "clean.csv"
    if not clean_path.exists():
        raise StageError("analyze", f"missing input {clean_path}; run generate first")
    clean = load_dataset_csv(clean_path, n_classes=cfg.dataset.n_classes)
    classifier = build_classifier(cfg)
    files = []
    reports = {}
    for arm in ("unguided", "guided"):
        path = out / f"samples_{arm}.csv"
        if not path.exists():
            raise StageError("analyze", f"missing input {path}; run sample first")
        x, labels = _load_samples_csv(path)
        reports[arm] = metrics_report(clean, x, labels, cfg.metrics_k, classifier)
        _write_json(out / f"metrics_{arm}.json", reports[arm])
        files.append(f"metrics_{arm}.json")
    comparison = {
        "unguided": reports["unguided"],
        "guided": reports["guided"],
        "purity_gain": reports["guided"]["purity"] - reports["unguided"]["purity"],
        "cw_frechet_drop": (reports["unguided"]["cw_aggregate"]["cw_frechet"]
                            - reports["guided"]["cw_aggregate"]["cw_frechet"]),
    }
    _write_json(out / "comparison.json", comparison)
    files.append("comparison.json")

    score = load_score_model(out)
    curves = measure_phase_curves(score, score.n_classes,
                                  n_chains=min(cfg.sampling.n_samples, 2000),
                                  seed=cfg.seed + 8, classifier=classifier)
    curves.save_csv(out / "phase_curves.csv")
    files.append("phase_curves.csv")
    suggestion = suggest_interval(curves)
    _write_json(out / "interval_suggestion.json", {
        "s_clip_min": suggestion.s_clip_min,
        "s_clip_max": suggestion.s_clip_max,
        "fired_steps": suggestion.fired_steps,
        "flat": suggestion.flat,
    })
    files.append("interval_suggestion.json")
    return files


def stage_plot(cfg: RunConfig, out: Path):
    curves_path = out / "phase_curves.csv"
    if not curves_path.exists():
        raise StageError("plot", f"missing input {curves_path}; run analyze first")
    curves = PhaseCurves.load_csv(curves_path)
    files = []
    line_plot_svg(out / "phase_curves.svg", curves.ts,
                  {"confidence": curves.confidence,
                   "instability": curves.instability},
                  title="confidence and instability", x_label="noise level",
                  y_label="probability", log_x=True)
    files.append("phase_curves.svg")
    classifier = build_classifier(cfg)
    for arm in ("unguided", "guided"):
        path = out / f"samples_{arm}.csv"
        if not path.exists():
            raise StageError("plot", f"missing input {path}; run sample first")
        x, _ = _load_samples_csv(path)
        if x.shape[0] == 0:
            raise StageError("plot", f"sample file {path} is empty")
        pred = classifier.predict(x)
        name = f"samples_{arm}.svg"
        scatter_plot_svg(out / name, x, pred, title=f"samples ({arm}), oracle classes",
                         n_classes=classifier.n_classes)
        files.append(name)
    return files


STAGES = {
    "generate": stage_generate,
    "train-score": stage_train_score,
    "detect": stage_detect,
    "train-disc": stage_train_disc,
    "sample": stage_sample,
    "analyze": stage_analyze,
    "plot": stage_plot,
}

PIPELINE_ORDER = ("generate", "train-score", "detect", "train-disc",
                  "sample", "analyze", "plot")


def run_stage(name, cfg: RunConfig, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    try:
        files = STAGES[name](cfg, out)
    except StageError:
        raise
    except Exception as err:
        raise StageError(name, str(err)) from err
    elapsed = time.monotonic() - t0
    return {"seconds": elapsed, "outputs": {f: _sha256(out / f) for f in files}}


def run_pipeline(cfg: RunConfig, out):
    """Execute all stages in order and write manifest.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stages = {}
    for name in PIPELINE_ORDER:
        stages[name] = run_stage(name, cfg, out)
    manifest = {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "stages": stages,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def manifest_hashes(manifest):
    """Flat {filename: sha256} map over all stages."""
    out = {}
    for stage in manifest["stages"].values():
        out.update(stage["outputs"])
    return out


def verify_manifest(out):
    """Recompute artifact hashes against manifest.json; returns mismatches."""
    out = Path(out)
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    bad = {}
    for name, digest in manifest_hashes(manifest).items():
        actual = _sha256(out / name) if (out / name).exists() else None
        if actual != digest:
            bad[name] = {"expected": digest, "actual": actual}
    return bad
