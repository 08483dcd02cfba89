"""Epsilon-rectified Schrodinger bridge matching for short 2D trajectories."""
from .bridge import (BridgeConfig, BridgeDomainError, BridgeSample, PoleError, bridge_mean,
                     bridge_std, dlog_sigma_dt, dmu_dt, interp_coeff, kl_rectified, sample_bridge,
                     target_velocity, velocity_variance)
from .model import VelocityModel, to_velocity
from .prior import LearnedPrior, PriorKind, sample_prior
from .sampler import SamplerConfig, euler_integrate, heun_integrate, nfe_of
from .schedules import TimestepSchedule, karras_schedule, sample_training_time

__version__ = "0.1.0"
