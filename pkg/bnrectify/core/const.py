"""
Application-wide constants
"""

# Normalization layers. Copied into every model manifest at build time.
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

DEFAULT_SAMPLE_COUNT = 32
DEFAULT_GN_GROUPS = 4

# Pixel data enters the network scaled to [0, 1].
PIXEL_SCALE = 255.0

# Number of images pushed through the network at once during evaluation.
EVAL_CHUNK = 256

DATASET_MAGIC = b"RSET1"
LABELS_MAGIC = b"RLBL1"
DATASET_SUFFIX = ".rset"
LABELS_SUFFIX = ".rlbl"

MODEL_MAGIC = "bnrectify-model"
MODEL_VERSION = 1
MANIFEST_SUFFIX = ".manifest"
BLOB_SUFFIX = ".blob"

RUN_MANIFEST = "run.manifest"

REPORT_COLUMNS = ("corruption", "severity", "error", "n_samples", "adapted", "policy")
TRACE_COLUMNS = ("epoch", "loss", "train_acc", "eval_acc")

EXIT_FORMAT = 3
EXIT_SEMANTIC = 4

CORRUPTION_KINDS = (
    "gaussian_noise",
    "shot_noise",
    "impulse_noise",
    "defocus_blur",
    "glass_blur",
    "motion_blur",
    "zoom_blur",
    "contrast",
    "brightness",
    "pixelate",
)
SEVERITIES = (1, 2, 3, 4, 5)
