"""Stability margins for linear systems with bounded time-varying delays."""

__version__ = "0.1.0"

from .core import (
    INF, DelayCase, DelayTrajectory, DelayUncertainty, InvalidInput, LtiDelaySystem,
    Segment, Signal, case_for_d, example_system, l2_norm_sq, load_system, parse_system,
    serialize_system,
)
from .bounds import delta_apply, empirical_gain, f_of_p, kernel_sup, margin_multiplier
from .frequency import freq_margin, hinf_norm, k_margin, nominal_stable, small_gain_check
from .lmi import feasibility_solve, mu_max_bisect
from .sim import dde_integrate, margin_probe
