"""
Configuration variables for cause discovery

"""

import os

from fractions import Fraction

# Randomness
# PAC_SEED
# Seed used by the generator and the bench harness when no --seed is given.
# Default to 1
DEFAULT_SEED = int(os.environ.get("PAC_SEED", "1"))

# Search configuration
# PAC_MAX_PATHS
# Maximum number of root-to-absorption paths enumerated by the subgraph
# decomposition, the trace signatures and the brute-force oracle.
# Default to 100000
# PAC_SPLIT_RATIO
# Fraction of a split abstract state that stays grouped (alpha), in (0, 1].
# Accepts decimals or a/b. Default to 0.6
# PAC_MAX_ROUNDS
# Maximum number of abstraction-refinement rounds.
# Default to 50
# PAC_JOBS
# Number of worker processes for candidate checks and bench cases.
# Default to 1 (deterministic, no pool)
MAX_PATHS = int(os.environ.get("PAC_MAX_PATHS", "100000"))
DEFAULT_SPLIT_RATIO = Fraction(os.environ.get("PAC_SPLIT_RATIO", "0.6"))
DEFAULT_MAX_ROUNDS = int(os.environ.get("PAC_MAX_ROUNDS", "50"))
DEFAULT_JOBS = int(os.environ.get("PAC_JOBS", "1"))

# Bench configuration
# PAC_BENCH_TIMEOUT
# Per-pipeline timeout in seconds for each bench case.
# Default to 600
BENCH_TIMEOUT = float(os.environ.get("PAC_BENCH_TIMEOUT", "600"))

# Diagnostics
# PAC_WARN_MIXED_EFFECT
# If set to "False", abstract states holding both effect and non-effect
# concrete states are not reported with a warning.
# Default to "True"
WARN_MIXED_EFFECT = os.environ.get("PAC_WARN_MIXED_EFFECT", "True").lower() == "true"
