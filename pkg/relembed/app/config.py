import logging
import os
from pathlib import Path

from dotenv import load_dotenv

env_path = Path(__file__).resolve().parents[2] / ".env"
load_dotenv(dotenv_path=env_path)
load_dotenv()

DEFAULT_SEED = int(os.getenv("RELEMBED_SEED", "0"))
LOG_LEVEL = os.getenv("RELEMBED_LOG_LEVEL", "INFO").upper()
# Above this many items neighbor relations come from a ball tree instead of an exact sort
KNN_TREE_THRESHOLD = int(os.getenv("RELEMBED_KNN_TREE_THRESHOLD", "5000"))
SHOW_PROGRESS = os.getenv("RELEMBED_PROGRESS", "1") not in ("0", "false", "False", "")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = LOG_LEVEL) -> logging.Logger:
    """Attach a single stream handler to the package logger."""
    logger = logging.getLogger("relembed")
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.setLevel(level)
    return logger
