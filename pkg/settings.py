"""
Environment-backed defaults.
Values come from the process environment or a local .env file.
"""
import os

from dotenv import load_dotenv

load_dotenv()


def _float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


def _int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


DEFAULT_DT = _float("GEOTRANSPORT_DT", 1e-3)
DEFAULT_SCHEME = os.getenv("GEOTRANSPORT_SCHEME", "rk4").lower()
DEFAULT_MAX_STEPS = _int("GEOTRANSPORT_MAX_STEPS", 1_000_000)
DEFAULT_OUT_DIR = os.getenv("GEOTRANSPORT_OUT_DIR", "results")
LOG_LEVEL = os.getenv("GEOTRANSPORT_LOG_LEVEL", "INFO").upper()
DEFAULT_SEED = _int("GEOTRANSPORT_SEED", 0)
