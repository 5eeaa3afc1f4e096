"""Conditional GAN with dropout-sampled generator and discriminator functions."""

from .config import RunConfig, parse_config
from .data import Dataset, GmmSpec, make_gmm, mask_labels, read_idx, write_idx
from .evaluation import EvalReport, evaluate, mmd_real_fake, mode_coverage, test_error
from .nn import LayerSpec, ParamSet, forward, backward, init_params, mlp_specs, weight_normalize
from .objectives import LabelRegime, discriminator_loss, generator_loss, mmd_delta
from .rng import Rng
from .stochastic import DropoutSpec, predictive_stats, sample_fake_batch, sample_function
from .trainers import TrainConfig, TrainState, TrainingDiverged, fit, init_state, train_step

__version__ = "0.1.0"
