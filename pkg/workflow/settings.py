import os

from dotenv import load_dotenv, find_dotenv

_ = load_dotenv(find_dotenv())

DEFAULT_SEED = int(os.getenv("FACTORSEL_SEED", "20250101"))
OUTPUT_DIR = os.getenv("FACTORSEL_OUTPUT_DIR", "./results")
LOG_LEVEL = os.getenv("FACTORSEL_LOG_LEVEL", "INFO")
N_ITER = int(os.getenv("FACTORSEL_N_ITER", "4000"))
BURN_IN = int(os.getenv("FACTORSEL_BURN_IN", "1000"))
N_CHAINS = int(os.getenv("FACTORSEL_N_CHAINS", "2"))
PRIOR_DRAWS = int(os.getenv("FACTORSEL_PRIOR_DRAWS", "100000"))

VERSION = "0.1.0"
