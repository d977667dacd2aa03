"""Representation-conditioned latent diffusion transformer, desk scale.

A small numpy-backed autodiff core powers a patch-token diffusion denoiser
with three conditioning modes (unconditional, class, representation), the
two-stage pretrain/finetune protocol, zero-shot diffusion classification,
ancestral sampling, and feature-space Fréchet evaluation.
"""

__version__ = "0.1.0"

from .backbone import (DenoiserParams, EncoderParams, InferenceModel, denoise,
                       encode_representation, init_denoiser, init_encoder,
                       patchify, unpatchify)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .classifier import (ClassifierConfig, ScoreMatrix, classify,
                         classify_epsilon, evaluate, score_classes)
from .conditioning import (ConditioningVector, build_condition, embed_timestep,
                           swap_conditioning, timestep_frequency_embedding)
from .config import ModelConfig, dit_b, micro_8, s_micro
from .data import (Dataset, SyntheticSpec, from_latent, generate_synthetic,
                   load_dataset, read_pgm, save_dataset, split, to_latent,
                   write_pgm)
from .errors import (ConfigError, ContractError, DimensionError,
                     DivergenceError, IngestionError, InputError, LoadError,
                     ModeError, NumericError, RangeError, RcldtError,
                     TimestepError, UsageError)
from .metrics import (ClassificationReport, classification_metrics,
                      extract_features, frechet_distance)
from .sampler import (partial_denoise, posterior_mean, posterior_sigma, sample,
                      save_sweep_grid, z0_prediction_sweep)
from .schedule import NoiseSchedule, build_schedule, noise, predict_z0
from .tensor import Tensor, backward, set_strict
from .training import (AdamW, LossCurve, Model, TrainConfig, finetune,
                       init_model, loss_step, model_from_checkpoint,
                       model_to_checkpoint, pretrain, validation_loss)
