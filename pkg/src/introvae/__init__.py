"""Introspective variational autoencoder at desk scale."""
from .config import HyperParams, NetConfig, RunConfig, load_run_config, preset_hyperparams
from .losses import (
    LatentStats,
    LossReport,
    frechet_distance,
    hinge,
    kl_divergence,
    loss_encoder,
    loss_generator,
    mse_recon,
    reparameterize,
)
from .networks import build_encoder, build_generator, decode, encode, latent_interpolate, reconstruct
from .training import TrainState, adam_update, fit, init_state, pretrain_step, train_step

__version__ = "0.1.0"
