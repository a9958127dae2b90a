"""
Run settings shared by the command-line tools.

Explicit arguments win over environment variables, which win over the
defaults. A ``.env`` file in the working directory is loaded first.

Environment:
    SIXDOF_SEED       master seed for every random draw (default 0)
    SIXDOF_JOBS       worker count (default: number of CPU cores)
    SIXDOF_LOG_LEVEL  DEBUG, INFO, WARNING or ERROR (default INFO)
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

from .exceptions import ValidationError

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


class Settings:
    """Seed, parallelism and log level of one run."""

    def __init__(
        self,
        seed: Optional[int] = None,
        jobs: Optional[int] = None,
        log_level: Optional[str] = None,
        load_env_file: bool = True
    ):
        """
        Resolve the settings.

        Args:
            seed: master seed (default: SIXDOF_SEED env var, else 0)
            jobs: worker count (default: SIXDOF_JOBS env var, else CPU count)
            log_level: logging level name (default: SIXDOF_LOG_LEVEL env var, else INFO)
            load_env_file: read a ``.env`` file before looking at the environment
        """
        if load_env_file:
            load_dotenv()

        self.seed = self._int('seed', seed, 'SIXDOF_SEED', 0)
        self.jobs = self._int('jobs', jobs, 'SIXDOF_JOBS', os.cpu_count() or 1)
        self.log_level = (log_level or os.getenv('SIXDOF_LOG_LEVEL', 'INFO')).upper()

        # Validation
        if self.seed < 0:
            raise ValidationError(
                f"Seed must be >= 0, got {self.seed}. Set via --seed or SIXDOF_SEED."
            )
        if self.jobs < 1:
            raise ValidationError(
                f"Job count must be >= 1, got {self.jobs}. Set via --jobs or SIXDOF_JOBS."
            )
        if self.log_level not in LOG_LEVELS:
            raise ValidationError(
                f"Log level must be one of {', '.join(LOG_LEVELS)}, got '{self.log_level}'. "
                "Set via --log-level or SIXDOF_LOG_LEVEL."
            )

    @staticmethod
    def _int(name: str, value: Optional[int], env: str, default: int) -> int:
        if value is not None:
            return int(value)
        raw = os.getenv(env)
        if raw is None or raw.strip() == '':
            return default
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(f"{env} must be an integer {name}, got '{raw}'")

    def configure_logging(self) -> None:
        logging.basicConfig(
            level=getattr(logging, self.log_level),
            format='%(asctime)s %(levelname)s %(name)s: %(message)s'
        )

    def __repr__(self) -> str:
        return f'Settings(seed={self.seed}, jobs={self.jobs}, log_level={self.log_level})'
