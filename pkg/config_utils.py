import os
import logging
from dataclasses import dataclass

from dotenv import load_dotenv

from errors import ConfigError

# Load environment variables (important for local runs)
load_dotenv()

CODE_VERSION = "1.0.0"

# --- Defaults (overridden by .env / environment) ---
DEFAULT_MAX_SITES = 1_000_000
DEFAULT_WORKERS = 1
DEFAULT_KPM_JOBS = 1
DEFAULT_FLUX_QUANTUM = "h_over_e"
DEFAULT_SEED = 0
DEFAULT_LOG_LEVEL = "INFO"


@dataclass(frozen=True)
class Settings:
    max_sites: int = DEFAULT_MAX_SITES
    workers: int = DEFAULT_WORKERS
    kpm_jobs: int = DEFAULT_KPM_JOBS
    flux_quantum: str = DEFAULT_FLUX_QUANTUM
    seed: int = DEFAULT_SEED
    log_level: str = DEFAULT_LOG_LEVEL


def _env_int(key: str, default: int) -> int:
    raw = os.getenv(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"Environment variable {key}={raw!r} is not an integer.")


def load_settings() -> Settings:
    """Reads the HB_* keys from the environment (after .env has been loaded)."""
    return Settings(
        max_sites=_env_int("HB_MAX_SITES", DEFAULT_MAX_SITES),
        workers=_env_int("HB_WORKERS", DEFAULT_WORKERS),
        kpm_jobs=_env_int("HB_KPM_JOBS", DEFAULT_KPM_JOBS),
        flux_quantum=os.getenv("HB_FLUX_QUANTUM", DEFAULT_FLUX_QUANTUM).strip() or DEFAULT_FLUX_QUANTUM,
        seed=_env_int("HB_SEED", DEFAULT_SEED),
        log_level=os.getenv("HB_LOG_LEVEL", DEFAULT_LOG_LEVEL).strip().upper() or DEFAULT_LOG_LEVEL,
    )


def setup_logging(level: str | None = None):
    """Configure basic logging once, for the command-line entry point."""
    level = (level or load_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(name)s %(message)s")
