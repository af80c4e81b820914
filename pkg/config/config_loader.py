"""
Configuration loading for CFS Planner.

This module handles loading and validation of the solver configuration JSON file.

Constants:
    PROJECT_ROOT: Root directory of the project
    CONFIG_DIR: Configuration files directory
    SCENARIO_DIR: Bundled scenario files
    OUTPUT_DIR: Output files directory

Functions:
    load_config: Load and validate solver configuration from JSON
    load_solver_settings: CFS and sub-solver settings merged over defaults
    load_benchmark_settings: Sweep, validation and emission settings merged over defaults
"""

import json
from pathlib import Path
from typing import Dict, Optional, Union

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
CONFIG_DIR = PROJECT_ROOT / 'config'
SCENARIO_DIR = CONFIG_DIR / 'scenarios'
OUTPUT_DIR = PROJECT_ROOT / 'outputs'

SOLVER_DEFAULTS = {
    # CFS iteration
    'eps1': 1e-4,
    'eps2': None,  # None -> 1e-4 * (1 + J(x0))
    'max_iter': 100,
    'sample_checks': False,
    'time_budget_ms': None,
    # barrier sub-solver
    'mu0': 1.0,
    'mu_reduction': 0.2,
    'alpha': 0.25,
    'beta': 0.5,
    'gap_tol': 1e-9,
    'max_newton_steps': 50,
    'phase_one_slack': 1e-6,
}

BENCHMARK_DEFAULTS = {
    'horizons': [30, 40, 50, 100],
    'workers': 1,
    'emit_trajectories': False,
    'format': 'json',
    'validation_samples': 200,
    'seed': 0,
}


def load_config(path: Optional[Union[str, Path]] = None) -> Dict:
    """
    Load solver configuration from JSON file.

    Reads solver_config.json (or the given file) and validates basic structure.

    Parameters:
    -----------
    path : Optional[str or Path]
        Configuration file; defaults to config/solver_config.json

    Returns:
    --------
    Dict
        Configuration dictionary with 'cfs' and 'subsolver' keys

    Raises:
    -------
    FileNotFoundError
        If configuration file doesn't exist
    json.JSONDecodeError
        If configuration file contains invalid JSON
    KeyError
        If required configuration keys are missing
    """
    config_path = Path(path) if path is not None else CONFIG_DIR / 'solver_config.json'

    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path, 'r', encoding='utf-8') as f:
        config = json.load(f)

    # Validate required keys
    if 'cfs' not in config:
        raise KeyError("Configuration missing required 'cfs' key")
    if 'subsolver' not in config:
        raise KeyError("Configuration missing required 'subsolver' key")

    # Ensure output directory exists
    OUTPUT_DIR.mkdir(exist_ok=True)

    return config


def load_solver_settings(config: Dict = None) -> Dict:
    """
    Load CFS and sub-solver settings from configuration.

    Args:
        config: Configuration dictionary (optional, will load if not provided)

    Returns:
        Flat dictionary with the 'cfs' and 'subsolver' sections merged over
        SOLVER_DEFAULTS; feed it to CfsConfig.from_settings and
        BarrierSettings.from_settings
    """
    if config is None:
        config = load_config()

    # Merge with defaults (config values override defaults)
    return {**SOLVER_DEFAULTS, **config.get('cfs', {}), **config.get('subsolver', {})}


def load_benchmark_settings(config: Dict = None) -> Dict:
    """
    Load benchmark sweep settings from configuration.

    Args:
        config: Configuration dictionary (optional, will load if not provided)

    Returns:
        Dictionary with horizons, workers, emission options and the
        decomposition-check sample count

    Note:
        Returns defaults if 'benchmark' or 'validation' sections are missing.
    """
    if config is None:
        config = load_config()

    return {**BENCHMARK_DEFAULTS, **config.get('validation', {}), **config.get('benchmark', {})}
