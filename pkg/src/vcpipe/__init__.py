"""Desk-scale pipeline for prompt-based voice conversion training.

Stages: residual-enhanced two-stage K-Means content decoupling, kNN-teacher
pseudo-parallel pair synthesis, dual-mode pair sampling, the composite
MSE + SSIM + progressive cross-entropy objective with analytic gradients,
and a toy trainable converter to exercise everything end to end.
"""

from .converter import (AdamState, ConverterConfig, OptimizerConfig, ToyConverter,
                        backward_and_step, convert, gradient_check, load_checkpoint,
                        save_checkpoint, train)
from .decoupler import (DecouplerConfig, DecouplerModel, DistortionReport,
                        distortion_report, encode, fit_decoupler, load_decoupler,
                        save_decoupler)
from .evalkit import (CodebookStats, SyntheticCorpusSpec, codebook_stats,
                      generate_corpus, speaker_similarity_proxy)
from .features import (CodebookFile, FeatureMatrix, concat_frames,
                       prompt_length_frames, read_codebook_file, read_features,
                       slice_frames, write_codebook_file, write_features)
from .kmeans import (Codebook, KMeansConfig, assign, fit, load_codebook,
                     quantize, save_codebook)
from .losses import (LossConfig, LossGrads, LossReport, mse_loss, progressive_ce,
                     ssim_loss, total_loss)
from .sampler import PairConfig, TrainingPair, iter_pairs, make_pair
from .teacher import MatchingPool, build_pool, knn_convert, sample_speaker

__version__ = "0.1.0"
