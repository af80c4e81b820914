"""
Core modules for CFS Planner.

This package contains the optimization and benchmark modules of the convex
feasible set trajectory planner.

Modules:
    nonsmooth: Directional derivatives, sub-differentials and sub-gradient selection
    planning: Trajectory variables, cost model and difference operators
    subsolver: Log-barrier solver for the convex sub-problem
    cfs: Convex feasible set construction and the outer iteration
    scenario_loader: Read and validate scenario JSON files
    benchmark: Horizon sweeps over a scenario
    output_generator: Write JSON, CSV and XLSX reports
"""
