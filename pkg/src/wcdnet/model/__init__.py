from .blocks import ComparisonBlock, FusionBlock, RawMaskHead, ResidualBlock, SegmentedEncoder, UNet
from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, load_weights, save_checkpoint
from .network import ModelOutput, WCDNet, binarize, build_model
from .remap import Remap, remap, segment_current

__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "ComparisonBlock",
    "FusionBlock",
    "ModelOutput",
    "RawMaskHead",
    "Remap",
    "ResidualBlock",
    "SegmentedEncoder",
    "UNet",
    "WCDNet",
    "binarize",
    "build_model",
    "load_checkpoint",
    "load_weights",
    "remap",
    "save_checkpoint",
    "segment_current",
]
