#!/usr/bin/env python3
"""
Process-wide defaults for experiment runs.
Values come from environment variables or a .env file, then built-in defaults.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv()


def _int_env(name, default):
    value = os.getenv(name, '')
    try:
        return int(value) if value else default
    except ValueError:
        return value  # reported by Config.validate()


class Config:
    """
    Defaults shared by every command.
    Command-line flags and run config files override these.
    """

    # Master seed every random stream is derived from
    MASTER_SEED = _int_env('PP_MASTER_SEED', 20240101)

    # Worker threads for sweeps and replications
    JOBS = _int_env('PP_JOBS', 1)

    # Replications per grid cell when a config does not say
    DEFAULT_SEEDS = _int_env('PP_DEFAULT_SEEDS', 100)

    # Retained particle noise entries (d * N * T) above which history is off by default
    HISTORY_LIMIT = _int_env('PP_HISTORY_LIMIT', 10_000_000)

    # Output locations
    LOG_DIR = os.getenv('PP_LOG_DIR', 'logs')
    OUTPUT_DIR = os.getenv('PP_OUTPUT_DIR', 'results')
    LOG_LEVEL = os.getenv('PP_LOG_LEVEL', 'INFO').upper()

    @classmethod
    def validate(cls):
        """
        Check that every setting has a usable value.

        Returns:
            list: descriptions of invalid settings
        """
        problems = []
        for key in ('MASTER_SEED', 'JOBS', 'DEFAULT_SEEDS', 'HISTORY_LIMIT'):
            value = getattr(cls, key)
            if not isinstance(value, int):
                problems.append(f"{key}: expected an integer, got {value!r}")
        for key in ('JOBS', 'DEFAULT_SEEDS'):
            value = getattr(cls, key)
            if isinstance(value, int) and value < 1:
                problems.append(f"{key}: must be at least 1, got {value}")
        if isinstance(cls.MASTER_SEED, int) and not 0 <= cls.MASTER_SEED < 2 ** 64:
            problems.append(f"MASTER_SEED: must fit in 64 unsigned bits, got {cls.MASTER_SEED}")
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"LOG_LEVEL: unknown level {cls.LOG_LEVEL!r}")
        return problems

    @classmethod
    def defaults(cls):
        """Values a run config falls back to."""
        return {'seed': cls.MASTER_SEED, 'seeds': cls.DEFAULT_SEEDS, 'jobs': cls.JOBS}

    @classmethod
    def print_status(cls):
        """
        Print the resolved settings and any problems with them.
        """
        print("⚙️ Run Defaults:")
        print("=" * 50)

        problems = cls.validate()
        if problems:
            print("❌ Invalid settings:")
            for problem in problems:
                print(f"   - {problem}")
            print("\n💡 To fix this:")
            print("   1. Edit the PP_* variables in your .env file")
            print("   2. Or set them as environment variables")
        else:
            print("✅ All settings are valid")

        print(f"\n📋 Current Values:")
        for key in ('MASTER_SEED', 'JOBS', 'DEFAULT_SEEDS', 'HISTORY_LIMIT', 'LOG_DIR', 'OUTPUT_DIR', 'LOG_LEVEL'):
            print(f"   {key}: {getattr(cls, key)}")


# Example usage and validation
if __name__ == "__main__":
    Config.print_status()
