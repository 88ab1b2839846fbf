"""Desk-scale diffusion lab: label-corrupted 2D data, score models trained on
observed labels, time-dependent discriminators on detector-filtered splits,
and gamma-gated correction of the sampling trajectory, with full diagnostics.
"""

__version__ = "0.1.0"

from .analytic import (AnalyticGaussianScore, AnalyticMixtureScore,
                       AnalyticPairLogRatio)
from .data import (Dataset2D, apply_asymmetric_noise, apply_idn_noise,
                   apply_noise, apply_symmetric_noise, load_dataset_csv,
                   make_gaussian_mixture, make_two_moons, save_dataset_csv)
from .detect import (DetectorReport, detect_confidence,
                     detect_oracle_with_errors, score_detector, split_by_report)
from .discriminator import (AugmentConfig, AugmentedBatch, DiscriminatorModel,
                            adv_loss, adv_loss_from_logits, mix_instances,
                            pseudo_clean_shuffle, simix, train_discriminator)
from .guidance import (DiscriminatorHook, GateTrace, GuidanceConfig, gamma_gate,
                       guided_sample, guided_sample_batch, guided_score)
from .metrics import (BayesClassifier, PhaseCurves, classwise_metrics,
                      gaussian_frechet, knn_density_coverage,
                      measure_phase_curves, metrics_report, suggest_interval)
from .nn import (AdamState, DenseNetwork, NonFiniteError, ShapeError,
                 load_checkpoint, save_checkpoint)
from .sampler import BatchTrajectory, Trajectory, heun_sample, heun_sample_batch
from .schedule import NoiseSchedule, dsm_target, perturb
from .score import (LossTrace, ScoreModel, TrainConfig, TrainingDiverged,
                    train_score)
