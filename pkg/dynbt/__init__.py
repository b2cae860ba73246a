__version__ = '0.1.0'

from loguru import logger
import sys

# Remove default handler
logger.remove()

# Same sink as the CLI uses; the CLI re-adds it at the level the user asks for
LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <cyan>{module:>12}:{line}</cyan> | <level>{level: >8}</level> | <level>{message}</level>"
logger.add(sys.stderr, format=LOG_FORMAT, colorize=True, level="INFO")

# Silent when used as a library; call logger.enable("dynbt") to see progress
logger.disable("dynbt")

from .data import CountMatrix, Dataset, MatchRecord, load_csv, raw_count_matrix, write_csv
from .errors import DynBTError, NotStronglyConnected
from .graph import check_condition1, condition1_holds, connectivity_probability_bound
from .kernel import KernelFamily, KernelSpec, bandwidth_pointwise, bandwidth_uniform, kernel_weight, smooth_counts
from .solver import FitReport, Method, fit, fit_static, fit_trajectory, projection, rank, win_prob
from .theory import TheoryParams
from .tuning import loocv, loocv_nll, select_bandwidth
