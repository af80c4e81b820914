"""
Configuration package for CFS Planner.

This package contains settings loading, defaults and the bundled scenarios.

Modules:
    config_loader: Load solver and benchmark settings from JSON
"""

__version__ = '1.0.0'
