# config/settings.py
import os
from dotenv import load_dotenv

load_dotenv()

# Logging / output
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
OUT_DIR = os.getenv("OUT_DIR", "artifacts")

# Cascade settings
CASCADE_STAGE_COUNT = int(os.getenv("CASCADE_STAGE_COUNT", 7))
CASCADE_VR_BASE = float(os.getenv("CASCADE_VR_BASE", 0.999))
CASCADE_TOP_K = int(os.getenv("CASCADE_TOP_K", 5))
MAX_GENUINE_PAIRS = int(os.getenv("MAX_GENUINE_PAIRS", 10000))
MAX_IMPOSTOR_PAIRS = int(os.getenv("MAX_IMPOSTOR_PAIRS", 10000))

# LDA settings
LDA_DIM = int(os.getenv("LDA_DIM", 428))
LDA_WHITEN_TOL = float(os.getenv("LDA_WHITEN_TOL", 1e-10))

# Synthetic data settings
SYNTH_SEED = int(os.getenv("SYNTH_SEED", 42))
SYNTH_TRAIN_IDS = int(os.getenv("SYNTH_TRAIN_IDS", 430))
SYNTH_EVAL_IDS = int(os.getenv("SYNTH_EVAL_IDS", 1196))
SYNTH_SAMPLES_PER_ID = int(os.getenv("SYNTH_SAMPLES_PER_ID", 4))
SYNTH_EVAL_SAMPLES_PER_ID = int(os.getenv("SYNTH_EVAL_SAMPLES_PER_ID", 2))
SYNTH_CALIB_IDS = int(os.getenv("SYNTH_CALIB_IDS", 2000))
SYNTH_CALIB_SAMPLES_PER_ID = int(os.getenv("SYNTH_CALIB_SAMPLES_PER_ID", 6))
SYNTH_DIM_RAW = int(os.getenv("SYNTH_DIM_RAW", 512))
SYNTH_NOISE_SIGMA = float(os.getenv("SYNTH_NOISE_SIGMA", 0.14))
SYNTH_SPECTRUM_DECAY = float(os.getenv("SYNTH_SPECTRUM_DECAY", 0.25))
SYNTH_DISTRACTORS = int(os.getenv("SYNTH_DISTRACTORS", 100000))

# Benchmark settings
BENCH_REPEATS = int(os.getenv("BENCH_REPEATS", 3))
BENCH_WORKERS = int(os.getenv("BENCH_WORKERS", 1))
BENCH_CHUNK_ROWS = int(os.getenv("BENCH_CHUNK_ROWS", 16384))
BENCH_RANKING_DEPTH = int(os.getenv("BENCH_RANKING_DEPTH", 10))

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
