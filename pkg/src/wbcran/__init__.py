"""Power-minimizing beamforming for cache-enabled C-RAN with wireless backhaul.

Submodules
----------
scenario
    Seeded topologies, channels, Zipf requests, multicast groups and cache placement.
model
    SINR, rate and power evaluators plus the feasibility audit.
conic
    Backend-neutral conic program builder and the Clarabel adapter.
ccp
    Smoothed-l0 convex-concave procedure and the full-clustering baselines.
verify
    Tightness oracles, SDR bounds and exhaustive small-instance search.
harness
    Monte-Carlo campaigns and their CSV/JSON artifacts.
"""

from .ccp import CcpOptions, Mode, Solution, SolveStatus, ccp_solve, initialize, run_baseline, solve_instance
from .model import BeamformerSet, Clustering, check_p0_feasibility
from .scenario import CacheStrategy, Instance, SystemConfig, build_instance, desk_config, full_config

__version__ = "0.1.0"

__all__ = [
    "BeamformerSet", "CacheStrategy", "CcpOptions", "Clustering", "Instance", "Mode", "Solution",
    "SolveStatus", "SystemConfig", "build_instance", "ccp_solve", "check_p0_feasibility",
    "desk_config", "initialize", "full_config", "run_baseline", "solve_instance",
]
