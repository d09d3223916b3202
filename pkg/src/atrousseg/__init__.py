"""Multitask semantic segmentation with atrous residual encoders, built on
a from-scratch reverse-mode autodiff core."""

from .autodiff import Node, no_grad, parameter
from .blocks import BlockConfig, Combine, Conv2DN, PSPPooling, ResBlockA, UpSampleBlock
from .labels import SampleRecord, derive_record
from .losses import LOSS_IDS, loss_fn, multitask_loss, volume_weights
from .models import ModelSpec, build_model, load_checkpoint, param_count, save_checkpoint
from .trainer import Adam, TrainConfig, lr_finder, train

__all__ = [
    "Node", "no_grad", "parameter",
    "BlockConfig", "Combine", "Conv2DN", "PSPPooling", "ResBlockA", "UpSampleBlock",
    "SampleRecord", "derive_record",
    "LOSS_IDS", "loss_fn", "multitask_loss", "volume_weights",
    "ModelSpec", "build_model", "load_checkpoint", "param_count", "save_checkpoint",
    "Adam", "TrainConfig", "lr_finder", "train",
]

__version__ = "0.1.0"
