"""Lab configuration loaded from environment.

Defaults here are sized for desk-scale runs. Override any of them through
environment variables or a local .env file; experiment-specific settings live
in the experiment config files (see schemas/experiment.py), not here.
"""

import os
from dotenv import load_dotenv

load_dotenv()


def _truthy(name: str, default: str = "0") -> bool:
    return str(os.getenv(name, default)).lower() in {"1", "true", "yes", "on"}


class Config:
    # Version string recorded in every run record.
    VERSION = os.getenv("LAB_VERSION", "0.3.0")

    # Builders refuse graphs with more vertices than this.
    VERTEX_BUDGET = int(os.getenv("LAB_VERTEX_BUDGET", "2000000"))

    # Self-avoiding walk enumeration budget, counted in walk extensions.
    SAW_BUDGET = int(os.getenv("LAB_SAW_BUDGET", str(10**8)))

    # Ratio-test verdicts: window of trailing shells and tolerance around 1.
    RATIO_WINDOW = int(os.getenv("LAB_RATIO_WINDOW", "3"))
    RATIO_TOLERANCE = float(os.getenv("LAB_RATIO_TOLERANCE", "0.02"))

    # Bisection bracket width for critical parameter estimates.
    BISECTION_WIDTH = float(os.getenv("LAB_BISECTION_WIDTH", "1e-3"))

    # One-sided normal quantile for bound checks (2.33 ~ 99%).
    CI_K = float(os.getenv("LAB_CI_K", "2.33"))

    # Worker threads for Monte Carlo trials. Results do not depend on it.
    WORKERS = int(os.getenv("LAB_WORKERS", str(os.cpu_count() or 1)))

    # Size limits for direct sparse solves and dense diagonalization.
    SPARSE_SOLVE_LIMIT = int(os.getenv("LAB_SPARSE_SOLVE_LIMIT", "10000"))
    EIG_LIMIT = int(os.getenv("LAB_EIG_LIMIT", "3000"))

    # Relative residual accepted after every linear solve.
    SOLVE_RESIDUAL_TOL = float(os.getenv("LAB_SOLVE_RESIDUAL_TOL", "1e-10"))

    # Where run records go when the config does not name an output path.
    OUTPUT_DIR = os.getenv("LAB_OUTPUT_DIR", "runs")

    LOG_LEVEL = os.getenv("LAB_LOG_LEVEL", "INFO").upper()

    # Include tracebacks in JSON error envelopes.
    SHOW_DETAILED_ERRORS = _truthy("LAB_SHOW_DETAILED_ERRORS")
