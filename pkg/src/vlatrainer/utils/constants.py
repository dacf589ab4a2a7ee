ACTION_DIMS = 7
BINS_PER_DIM = 256
INSTRUCTION_LENGTH = 12

PAD_TOKEN = "<pad>"
END_TOKEN = "<end>"

CHECKPOINT_MAGIC = b"VLARLCK1"
CHECKPOINT_VERSION = 1

SUITE_IDS = ("spatial", "object", "goal", "long")

NUM_OBJECTS = 3
MAX_STAGES = 2

# Tabletop vocabulary the suite generator draws instructions from.
OBJECT_COLORS = {
    "red": -1.0,
    "green": -0.6,
    "blue": -0.2,
    "yellow": 0.2,
    "white": 0.6,
    "black": 1.0,
}
SPATIAL_OBJECT = "bowl"

OBJECT_SPOTS = {
    "left": (-0.35, 0.15),
    "right": (0.35, 0.15),
    "center": (0.0, 0.1),
    "back": (0.0, 0.45),
    "front": (0.0, -0.2),
}

REGION_SLOTS = {
    "plate": (-0.45, -0.45),
    "basket": (0.45, -0.45),
    "tray": (-0.6, 0.5),
    "box": (0.6, 0.5),
}

# Run directory layout
CONFIG_FILE = "config.json"
VOCAB_FILE = "vocab.tsv"
SUITE_FILE = "suite.json"
DEMOS_DIR = "demos"
DEMOS_FILE = "demos.bin"
MANIFEST_FILE = "manifest.json"
SFT_DIR = "sft"
POLICY_CHECKPOINT = "policy.ckpt"
LOSS_CURVE_FILE = "loss_curve.jsonl"
LABELS_DIR = "labels"
LABELS_FILE = "labels.jsonl"
RPRM_DIR = "rprm"
RPRM_CHECKPOINT = "rprm.ckpt"
RPRM_REPORT_FILE = "report.json"
TRAIN_DIR = "train"
METRICS_FILE = "metrics.jsonl"
EVAL_SERIES_FILE = "eval.jsonl"
COVERAGE_FILE = "coverage.jsonl"
CHECKPOINTS_DIR = "checkpoints"
FINAL_CHECKPOINT = "final.ckpt"
EVAL_DIR = "eval"
EVAL_REPORT_FILE = "report.json"
EVAL_TRAJECTORIES_FILE = "successes.bin"
EXPORTS_DIR = "exports"

ENTROPY_DEFINITION = "path-conditional-sum"
