"""Load-balancing policies on server clusters: finite-N event simulation,
deterministic large-cluster limits, and system-time distributions."""

from .model import (ClusterSpec, ConfigError, ConvergenceError, Occupancy,
                    Policy, RunParams, ServerType, ServiceRateCurve,
                    Trajectory, ValidationError, parse_config,
                    serialize_config, validate)

__version__ = "0.1.0"

__all__ = [
    "ClusterSpec", "ConfigError", "ConvergenceError", "Occupancy", "Policy",
    "RunParams", "ServerType", "ServiceRateCurve", "Trajectory",
    "ValidationError", "parse_config", "serialize_config", "validate",
    "__version__",
]
