"""Shared defaults for the dehazing toolkit.

Every tunable number lives here so that configs, presets and the CLI agree
on one set of defaults.
"""

from enum import Enum

# Haze synthesis
BETA_CHOICES = (0.005, 0.01, 0.02, 0.03)  # per meter
A_RANGE = (0.75, 1.0)
T_FLOOR = 0.05
DEFAULT_SEED = 0

# Network geometry (toy scale)
SCALES = 4
CHANNELS = (8, 16, 32, 64)  # finest -> coarsest encoder level
RANGES = 3
D_BINS = 32
MEMORY_TOKENS = 4
WINDOW = 4
HEADS = 2
FFN_EXPANSION = 2
LEAKY_SLOPE = 0.1
LOGIT_EPS = 1e-3  # clip before taking logits of [0, 1] images

# Losses
LAMBDA_PHY = 0.2
LAMBDA_FLOW = 0.04

# Optimizer (AdamW + polynomial schedule)
LEARNING_RATE = 2e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01
POLY_POWER = 0.9
CLIP_LENGTH = 4
TRAIN_STEPS = 300

# Metrics
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSNR_INFINITY = float("inf")

# File formats
CHECKPOINT_MAGIC = b"DHZC"
CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
PNG_LEVELS = 255

# Gradient checking
GRAD_EPS = 1e-5

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class InspectTarget(Enum):
    FLOWS = "flows"
    WEIGHTS = "weights"
    PRIORS = "priors"
    COMPONENTS = "components"


class RangeMode(Enum):
    MULTI = "multi"
    SINGLE_SET = "single_set"
    FRAME_BY_FRAME = "frame_by_frame"
