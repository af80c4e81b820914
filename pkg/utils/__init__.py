"""
Utility modules for CFS Planner.

This package contains utility functions and helpers used throughout the application.

Modules:
    logger: Logging configuration and setup
    errors: Exception hierarchy
    geometry_converters: numpy and shapely geometry conversion
    xlsx_generator: Excel summary workbook
"""
