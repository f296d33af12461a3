import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Radio defaults (SI units are used everywhere past the config boundary)
DEFAULT_CARRIER_HZ = 28e9
DEFAULT_TX_POWER_DBM = 23.0
DEFAULT_NOISE_DENSITY_DBM_HZ = -174.0
DEFAULT_BANDWIDTH_HZ = 10e6
DEFAULT_WAVEGUIDE_LEN_M = 10.0
DEFAULT_SAMPLE_SIZE = 10
DEFAULT_PAYLOAD_BITS = 2e7

# Scenario generator defaults
DEFAULT_R_RANGE = (1.0, 5.0)
DEFAULT_COMP_RANGE = (0.05, 0.15)
DEFAULT_DIRICHLET_ALPHA = 0.3
DEFAULT_N_LABELS = 10
DEFAULT_G0 = 1.0
DEFAULT_SAMPLES_RANGE = (50, 200)

# Solver defaults
DEFAULT_TIE_TOL = 1e-9
DEFAULT_N_STARTS = 8
DEFAULT_BREAKPOINT_GRID = 2048
DEFAULT_PROBES = 64
MAX_PROBES = 1024
DEFAULT_TOL_X = 1e-9
DEFAULT_TOL_T = 1e-9

# Monte Carlo draws are generated in fixed-size chunks, one RNG stream per chunk
MC_CHUNK = 65536
VERIFY_DRAWS = 100_000


class Config:
    # Output directory for CSV files and result documents
    OUTPUT_DIR = os.getenv('PASSFL_OUTPUT_DIR', './results')

    # Logging configuration
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('PASSFL_LOG_FILE', 'pass_fl.log')
