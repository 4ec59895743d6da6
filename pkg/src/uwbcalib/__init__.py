"""UWB anchor calibration on top of a visual-inertial filter.

Uncertainty-aware anchor initialization, block covariance initialization and
Schmidt/EKF range refinement, plus the simulation and Monte Carlo harness used
to evaluate them.
"""
from .config import RunConfig, load_config
from .initializer import ls_initialize, robust_initialize, initialize_covariance
from .pipeline import run_pipeline
from .refiner import ekf_uwb_update, skf_uwb_update
from .sim import generate

__all__ = ["RunConfig", "load_config", "ls_initialize", "robust_initialize",
           "initialize_covariance", "run_pipeline", "ekf_uwb_update", "skf_uwb_update",
           "generate"]
