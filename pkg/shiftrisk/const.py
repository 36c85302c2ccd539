"""Library defaults for shifted-population risk experiments."""
from __future__ import annotations

import math

# Rejection sampling
DEFAULT_MAX_ATTEMPTS = 1000
DEFAULT_COPIES = 1

# Training (SGD with momentum, warmup then cosine)
DEFAULT_LAMBDA = 0.5
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 5e-4
DEFAULT_BASE_LR = 0.1
DEFAULT_BATCH_SIZE = 32
DEFAULT_EPOCHS = 30
DEFAULT_WARMUP_EPOCHS = 2
DEFAULT_STEP_FACTOR = 0.1

# Model
DEFAULT_ACTIVATION = "tanh"
DEFAULT_WIDTHS = (16, 8)

# Splits
DEFAULT_VAL_FRACTION = 0.1
DEFAULT_TEST_FRACTION = 0.2

# Numerical tolerances
DECOMPOSITION_TOLERANCE = 1e-10
INVERSE_TOLERANCE = 1e-9
IMAGE_RESIDUAL_TOLERANCE = 1e-6
GRADIENT_TOLERANCE = 1e-4
GRADIENT_STEP = 1e-5
GRADIENT_DENOM_FLOOR = 1e-3
# Gram determinant relative to the largest diagonal entry to the power d
SINGULAR_GRAM_DET = 1e-300
UNIT_CLAMP_LOW = 1e-6

# Experiment sizes
DECOMPOSITION_TRIALS = 50
BOUNDS_DRAWS = 1000
VARIANCE_TRIALS = 1000
VARIANCE_MIN_TRIALS = 100
VARIANCE_SAMPLES = 32
VARIANCE_COPIES = (1, 2, 4, 8, 16)
VARIANCE_PILOT_DRAWS = 256
VARIANCE_SLOPE_RANGE = (-1.15, -0.85)
ABLATION_LAMBDAS = (0.0001, 0.1, 0.5, 1.0)
ABLATION_SEEDS = 5

FULL_CIRCLE = (-math.pi, math.pi)
