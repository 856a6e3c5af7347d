"""THOR: diffusion-based anomaly detection with temporal harmonization."""

from thor.errors import CompatibilityError, ConfigError, ShapeError
from thor.schedules import NoiseSchedule, forward_closed, forward_step, make_linear_schedule
from thor.noise import NoiseSpec, sample_noise

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "ConfigError",
    "NoiseSchedule",
    "NoiseSpec",
    "ShapeError",
    "forward_closed",
    "forward_step",
    "make_linear_schedule",
    "sample_noise",
]
