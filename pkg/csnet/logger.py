"""
Logger configuration for the class support network engine.
"""

import logging
import os
import warnings

# Suppress numpy/pandas FutureWarning
warnings.filterwarnings("ignore", category=FutureWarning)

LOG_FILE = os.environ.get("CSNET_LOG_FILE", "csnet.log")

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
    handlers=[logging.FileHandler(LOG_FILE), logging.StreamHandler()],
)

logger = logging.getLogger("csnet")
