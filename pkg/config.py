from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# ── Defaults ──────────────────────────────────────────────────────────────────

DEFAULT_OUT_DIR = os.getenv("NETPGD_OUT_DIR", "results")
DEFAULT_WORKERS = int(os.getenv("NETPGD_WORKERS", "1"))
DEFAULT_LOG_LEVEL = os.getenv("NETPGD_LOG_LEVEL", "INFO")

# Z_1 is part of the problem instance, shared by every seed of a sweep
DEFAULT_LATENT_SEED = int(os.getenv("NETPGD_LATENT_SEED", "0"))

DEFAULT_SPEC = "mnist"
DIGIT_FIXTURE = Path(__file__).resolve().parent / "data" / "digit0.pgm"

# ── Constants ────────────────────────────────────────────────────────────────

MOMENTUM = 0.9
NORM_EPS = 1e-6
DIVERGENCE_FACTOR = 1e6  # projection loss above this multiple of the start loss
DIVERGENCE_FLOOR = 1e-12  # ...or of ‖target‖², whichever is larger

ETA_GAIN = 1.5  # default outer step is ETA_GAIN / ‖A‖²
OUTER_ITERS = 100
TOLERANCE = 1e-6
INNER_ITERS = 200
INNER_LR = 0.01

LASSO_ALPHA = 1e-5  # sklearn-style alpha; λ = n·alpha
ISTA_ITERS = 500
POWER_ITERS = 50

DEGENERATE_NORM = 1e-9
MAX_REDRAWS = 100

CS_RATIOS = (0.08, 0.1, 0.15, 0.2, 0.25, 0.3)
CPR_RATIOS = (0.1, 0.2, 0.3, 0.5, 1.0, 3.0)
REC_N_GRID = (20, 50, 100, 200, 400)

# CPR runs closer than this (relative) count as converged for δ_i statistics
CONVERGED_REL_ERROR = 0.1

# ── Output schema ────────────────────────────────────────────────────────────

RESULTS_HEADER = (
    "task", "solver", "ratio", "seed", "n", "nmse",
    "final_loss", "iters", "wall_time_s", "status",
)
SUMMARY_HEADER = (
    "task", "solver", "ratio", "n", "runs", "ok",
    "nmse_mean", "nmse_std", "delta_i_mean",
)
REC_HEADER = (
    "seed", "n", "d", "alpha", "mode", "trials", "discarded",
    "pass_rate", "min_ratio", "max_ratio",
)
