"""Simulation and tracking control for a car-like tractor towing trailers."""

from .controller import (BackstepState, ControlOutput, ControllerGains,
                         TrackingController, TrackingError, VirtualControl,
                         error_rates, error_transform, inverse_error_transform,
                         lyapunov_v1, omega1_dot, sinc_like, steering_law,
                         virtual_control)
from .errors import (ConfigError, DegenerateMapError, IllConditionedFitError,
                     InfeasibleTrajectoryError, IngestionError,
                     InvalidReferenceError, JackKnifeError, MapDomainError,
                     PlantAbortError, SingularSteeringError, TowsimError)
from .powertrain import (BrakeParams, DriveCommand, FitReport, MapFitSample,
                         PropulsionMap, ThrottleCommand, evaluate_map, fit_map,
                         invert_map, read_fit_samples, select_drive_actuation)
from .simulation import (AuditReport, HeldCommand, Plant, SimConfig, SimLog,
                         SimResult, Summary, integrate_step, lyapunov_audit,
                         run_closed_loop)
from .scenario import Scenario, load_map_file, load_scenario, write_map_file
from .trailers import (ChainState, ForceSensor, ReplayTable, SensorModel,
                       TrailerParams, chain_force_affine, chain_kinematics_step,
                       chain_rates, hitch_angles, load_replay_csv,
                       quasi_static_hitch_force)
from .trajectory import (FileTrajectory, ReferenceSample, SpeedProfile,
                         Trajectory, load_trajectory_csv, make_circle,
                         make_figure_eight, make_generator, make_line,
                         make_s_curve, min_turn_radius, write_trajectory_csv)
from .vehicle import (DynamicsCoefficients, HitchForce, StateRates,
                      TractorParams, TractorState, compute_coefficients,
                      constraint_residuals, cog_position, state_derivative,
                      steering_rate)

__version__ = "0.1.0"
