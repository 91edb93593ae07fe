"""Diffusion-conditioned viseme classifier."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import ChannelAttention, KANLayer, ModelConfig, UNet1D, VisemeDecoder
from .schedule import DiffusionSchedule, forward_diffuse, make_schedule
from .train import (
    TrainConfig,
    TrainingDiverged,
    apply_model,
    build_model,
    check_gradients,
    grad_check,
    loss,
    predict,
    softmax,
    top_k,
    train,
    train_arrays,
)
