"""ARZ traffic simulation, boundary state estimation and trajectory aggregation."""
from .errors import (ArzError, BlowUpError, CalibrationError, CFLError, ConfigError, DataError,
                     DegenerateStateError, DomainError, ObserverDivergenceError, ParameterError,
                     RegimeError)
from .fd import GreenshieldParams, ThreeParamFD, calibrate_three_param, critical_density
from .linearize import ReferenceState, Regime, injection_gains, reference_state
from .metrics import ErrorSeries, convergence_time, l2_error_series
from .observer import BoundaryMeasurements, run_observer, simulate_linear_error_system
from .solver import BoundarySpec, Grid, StateField, simulate_plant

__version__ = "0.1.0"
