import logging
import os

# ==================== LOGGER GLOBAL ====================
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("tweezer_magnetometer")


def set_verbose(verbose: bool) -> None:
    """Switch the shared logger between INFO and DEBUG"""
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
