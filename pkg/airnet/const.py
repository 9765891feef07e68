"""Constants for the airnet occupancy engine."""

PACKAGE_NAME = "airnet"
VERSION = "0.3.0"

# Environment variables
ENV_THREADS = "AIRNET_THREADS"
ENV_FINITE_CHECKS = "AIRNET_FINITE_CHECKS"

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

# Encoder defaults
DEFAULT_FEATURE_DIM = 256
DEFAULT_NUM_ANCHORS = 100
DEFAULT_DOWNSAMPLING_LAYERS = 2
DEFAULT_FULL_ATTENTION_LAYERS = 3
DEFAULT_K_ENC = 16
# Intermediate cardinality n1 for the sparse (N=300) and dense (N=3000) inputs
SPARSE_INTERMEDIATE_POINTS = 200
DENSE_INTERMEDIATE_POINTS = 500
DENSE_INPUT_POINTS = 3000

ENCODER_FAMILY_ATTENTIVE = "ours"
ENCODER_FAMILY_POINT_TRANSFORMER = "PT"
ENCODER_FAMILY_POINTNET = "PN"
ENCODER_FAMILIES = (
    ENCODER_FAMILY_ATTENTIVE,
    ENCODER_FAMILY_POINT_TRANSFORMER,
    ENCODER_FAMILY_POINTNET,
)
SET_ABS_ATTENTIVE = "attentive"
SET_ABS_MAXPOOL = "maxpool"

# Decoder defaults
DEFAULT_K_DEC = 7
DEFAULT_DECODER_DIM = 200
DEFAULT_HEAD_LAYERS = 5
DEFAULT_HEAD_HIDDEN = 128
DEFAULT_OCCUPANCY_THRESHOLD = 0.5
DECODER_ATTENTIVE = "ours"
DECODER_INTERP = "interp"
DECODER_KINDS = (DECODER_ATTENTIVE, DECODER_INTERP)
# Inverse-distance weights are 1 / (dist + INTERP_EPS)
INTERP_EPS = 1e-9

# BatchNorm
BN_MOMENTUM = 0.1
BN_EPS = 1e-5

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Training
DEFAULT_BATCH_SIZE = 64
DEFAULT_POINTS_PER_SHAPE = 1000
DEFAULT_LR = 5e-4
LR_DECAY_FACTOR = 0.2
LR_DECAY_EVERY = 200
DEFAULT_EPOCHS = 400
EARLY_STOP_PATIENCE = 100
# 1 in VAL_BUCKETS shapes (by index hash) lands in the validation split
VAL_BUCKETS = 10

# Synthetic data
UNIT_CUBE_HALF = 0.5
SHAPE_MARGIN = 0.05
NEAR_SURFACE_SIGMAS = (0.01, 0.05)
NOISY_INPUT_SIGMA = 0.005
DEFAULT_INPUT_POINTS = 300
DEFAULT_SUPERVISION_POINTS = 5000
REGIME_NEAR_SURFACE = "near_surface"
REGIME_UNIFORM = "uniform"
REGIMES = (REGIME_NEAR_SURFACE, REGIME_UNIFORM)
# Dataset presets: A = near-surface supervision, clean input;
# B = uniform supervision, noisy input.
DATASET_PRESETS = {
    "A": {"regime": REGIME_NEAR_SURFACE, "noise_sigma": 0.0},
    "B": {"regime": REGIME_UNIFORM, "noise_sigma": NOISY_INPUT_SIGMA},
}
# Accepted occupied fraction of a random shape (uniform-regime class balance)
MIN_OCCUPIED_FRACTION = 0.08
MAX_OCCUPIED_FRACTION = 0.5

# Extraction
DEFAULT_RES0 = 32
DEFAULT_UPSAMPLING_STEPS = 2
MIN_RES0 = 8
GRID_PADDING = 0.05
BBOX_INFLATE = 0.1
DECODE_CHUNK = 4096

# Metrics
DEFAULT_IOU_SAMPLES = 100_000
DEFAULT_SURFACE_SAMPLES = 100_000
DEFAULT_F_SCORE_THRESHOLD = 0.01

# File names inside dataset / output directories
INPUT_FILE = "input.xyz"
SUPERVISION_FILE = "supervision.bin"
SHAPE_FILE = "shape.json"
DATASET_MANIFEST = "manifest.json"
SHAPE_DIR_TEMPLATE = "shape_{index:05d}"
CONFIG_FILE = "config.txt"
METRICS_LOG = "metrics.log"
LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
REPORT_FILE = "report.txt"
MESH_TEMPLATE = "{name}.obj"

# Binary point-cloud header magic ("PCLD" little-endian)
POINTCLOUD_MAGIC = 0x444C4350
CHECKPOINT_MAGIC = "AIRNET-CHECKPOINT 1"
