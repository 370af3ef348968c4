"""
This file is for constants that can be initialized without any (expensive) dependencies.
"""

# Linear noise schedule
DEFAULT_T = 1000
DEFAULT_ALPHA_FIRST = 0.9999
DEFAULT_ALPHA_LAST = 0.98

# Sub-channels whose singular value falls below this are treated as pure noise
SINGULARITY_THRESHOLD = 1e-9

# Toy JSCC sizes: n source reals, M antennas, k channel uses (CBR = k/n)
DEFAULT_M = 2
DEFAULT_K = 16
DEFAULT_N = 64
REFERENCE_BATCH_SIZE = 4096
SOURCE_CONDITION_NUMBER = 10.0

# Feed-forward predictor
DEFAULT_HIDDEN_WIDTHS = (256, 256, 256)

# Monte Carlo harness
DEFAULT_SNR_GRID_DB = tuple(range(0, 21, 2))
DEFAULT_TRAINING_SNR_RANGE_DB = (0.0, 20.0)
DEFAULT_TRIALS = 10_000
DEFAULT_SVD_SAMPLES = 1_000_000
DEFAULT_CHUNK_SIZE = 512
DEFAULT_SEED = 1234
REPORTED_LAMBDA_GAP_DB = 10.37

CHECKPOINT_FORMAT = "dmmimo-arrays"
CHECKPOINT_VERSION = 1
