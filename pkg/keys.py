import os
import psutil
import math
class Keys():
    # optimizer
    LR = 1e-3
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8
    BN_EPS = 1e-5
    BN_MOMENTUM = 0.1
    BCE_CLAMP = 1e-7
    # model sizes
    BATCH_SIZE = 2048
    KEEP_RATIO = 0.5
    D_MAIN = 32
    D_AUX = 4
    HIDDEN_DIMS = (16, 16)
    CROSS_LAYERS = 2
    BACKBONES = ("mlp", "deepfm", "dcn")
    METHODS = ("none", "random", "adafs", "aefs")
    MODES = ("soft", "hard")
    MAX_EPOCHS = 5
    PRETRAIN_EPOCHS = 0
    SEED = 2024
    SPLIT_SEED = 0
    SPLIT_RATIOS = (0.8, 0.1, 0.1)
    # quantization
    MIN_FREQ = 1
    MISSING_TOKEN = "__missing__"
    OOV_ID = 0
    CRITEO_NUMERIC_FIELDS = 13
    CRITEO_CATEGORICAL_FIELDS = 26
    # synthetic planted-signal data
    SYNTH_FIELDS = 16
    SYNTH_INFORMATIVE = 8
    SYNTH_VOCAB = 50
    SYNTH_RECORDS = 200000
    SYNTH_WEIGHT_SCALE = 1.0
    SYNTH_DIR = r"data/synthetic"
    DATA_FILE = "data.csv"
    SCHEMA_FILE = "schema.json"
    INFORMATIVE_FILE = "informative.json"
    ORACLE_FILE = "oracle.json"
    VOCAB_FILE = "vocab.json"
    # run directories
    OUTPUT_ROOT = os.environ.get("AEFS_OUTPUT_ROOT", "runs")
    CHECKPOINT_FILE = "checkpoint.npz"
    CHECKPOINT_FORMAT = "aefs-checkpoint-v1"
    TRAIN_REPORT_FILE = "train_report.json"
    METRICS_REPORT = "metrics"
    MANIFEST_FILE = "manifest.json"
    CONFIG_FILE = "config.txt"
    SELECTION_DUMP_FILE = "selection.jsonl"
    ARTIFACT_VERSION = "1.0.0"
    # gradient checking
    GRAD_CHECK_EPS = 1e-5
    GRAD_CHECK_TOLERANCE = 1e-3
    PROGRESS = True
    #we use half of the physical cpu cores for compare cells
    NUM_PROCESSES = max(1, math.floor((psutil.cpu_count(logical=False) or 2)/2))
    MULTI_PROCESSING = False
