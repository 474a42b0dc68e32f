"""Planar one-track tractor dynamics with measured hitch forces.

The canonical state lives at the rear-axle midpoint (x, y), with yaw theta,
longitudinal speed v_x and steering angle psi.  Lateral velocity and yaw rate
are eliminated through the no-slip constraints, leaving a single longitudinal
acceleration equation driven by the drive force F_d and the two hitch force
components (H_x, H_y).  H_x > 0 resists forward motion; H_y > 0 pushes the
tractor to its left.

All functions here are pure; the dataclasses are immutable value records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import SingularSteeringError

# Steering angles within this band below pi/2 are rejected.  Commands are
# saturated at psi_max well before the singularity; the guard is for
# robustness against corrupted states only.
EPS_STEER = 1e-3


@dataclass(frozen=True)
class TractorParams:
    """Physical constants of the tractor.

    m: mass [kg]; J: yaw inertia [kg m^2]; a/b: COG to front/rear axle [m];
    c: rear axle to hitch sensor [m]; tau: steering lag time constant [s].
    The wheelbase L is always a + b.
    """

    m: float = 3000.0
    J: float = 4000.0
    a: float = 1.0
    b: float = 1.0
    c: float = 0.5
    tau: float = 0.2
    psi_max: float = 0.55
    u1_min: float = 0.0
    u1_max: float = 300.0
    u3_max: float = 40.0

    def __post_init__(self):
        if self.m <= 0 or self.J <= 0:
            raise ValueError("mass and inertia must be positive")
        if self.a <= 0 or self.b <= 0 or self.c < 0:
            raise ValueError("geometry must satisfy a > 0, b > 0, c >= 0")
        if self.tau <= 0:
            raise ValueError("steering time constant must be positive")
        if not 0 < self.psi_max < math.pi / 2:
            raise ValueError("psi_max must lie in (0, pi/2)")
        if self.u1_min < 0 or self.u1_max <= self.u1_min:
            raise ValueError("throttle range must satisfy 0 <= u1_min < u1_max")
        if self.u3_max <= 0:
            raise ValueError("u3_max must be positive")

    @property
    def L(self) -> float:
        """Wheelbase [m]."""
        return self.a + self.b


@dataclass(frozen=True)
class TractorState:
    """Pose, speed and steering angle at one time instant.

    theta is stored unwrapped; wrapping would break error continuity.
    """

    x: float
    y: float
    theta: float
    v_x: float
    psi: float


@dataclass(frozen=True)
class HitchForce:
    """Planar force at the hitch, in the tractor frame.

    H_x > 0 resists forward motion (drawbar tension while towing);
    H_y > 0 acts toward the tractor's left.
    """

    H_x: float = 0.0
    H_y: float = 0.0


@dataclass(frozen=True)
class DynamicsCoefficients:
    """The three acceleration coefficients and their shared normalizer Z."""

    phi1: float
    phi2: float
    phi3: float
    Z: float


@dataclass(frozen=True)
class StateRates:
    """Time derivatives of the rear-axle state (steering handled separately)."""

    x_dot: float
    y_dot: float
    theta_dot: float
    v_x_dot: float


def _check_steering(psi: float):
    if abs(psi) >= math.pi / 2 - EPS_STEER:
        raise SingularSteeringError(psi)


def phi_terms(m, J, b, L, c, psi, psi_dot, v_x):
    """Raw (phi1, phi2, phi3, Z) from floats. Hot path; no validation."""
    cos_psi = math.cos(psi)
    tan_psi = math.tan(psi)
    mb2J = m * b * b + J
    Z = cos_psi * cos_psi * (L * L * m + mb2J * tan_psi * tan_psi)
    phi1 = -(mb2J * tan_psi * psi_dot * v_x) / Z
    phi2 = (L * L * cos_psi * cos_psi) / Z
    phi3 = (L * L * c * math.sin(psi) * cos_psi) / Z
    return phi1, phi2, phi3, Z


def compute_coefficients(params: TractorParams, psi: float, psi_dot: float,
                         v_x: float) -> DynamicsCoefficients:
    """Evaluate the longitudinal-acceleration coefficients at one state."""
    _check_steering(psi)
    phi1, phi2, phi3, Z = phi_terms(
        params.m, params.J, params.b, params.L, params.c, psi, psi_dot, v_x)
    return DynamicsCoefficients(phi1, phi2, phi3, Z)


def state_derivative(params: TractorParams, state: TractorState, F_d: float,
                     hitch: HitchForce, psi_dot: float) -> StateRates:
    """Continuous-time rates of (x, y, theta, v_x) under the given inputs."""
    _check_steering(state.psi)
    phi1, phi2, phi3, _ = phi_terms(
        params.m, params.J, params.b, params.L, params.c,
        state.psi, psi_dot, state.v_x)
    return StateRates(
        x_dot=state.v_x * math.cos(state.theta),
        y_dot=state.v_x * math.sin(state.theta),
        theta_dot=state.v_x * math.tan(state.psi) / params.L,
        v_x_dot=phi1 + phi2 * (F_d - hitch.H_x) - phi3 * hitch.H_y,
    )


def steering_rate(params: TractorParams, psi: float, u2: float) -> float:
    """First-order steering actuator: psi follows the command with lag tau."""
    return (u2 - psi) / params.tau


def cog_position(params: TractorParams, state: TractorState):
    """Center of gravity reconstructed from the rear-axle point."""
    return (state.x + params.b * math.cos(state.theta),
            state.y + params.b * math.sin(state.theta))


def constraint_residuals(params: TractorParams, state: TractorState,
                         rates: StateRates):
    """No-slip residuals of the rear and front wheels.

    Both are identically zero for rates produced by ``state_derivative``;
    they serve as an independent check on integrated trajectories.
    """
    theta = state.theta
    th_dot = rates.theta_dot
    sin_th, cos_th = math.sin(theta), math.cos(theta)
    # COG rates from the rear-axle rates
    xg_dot = rates.x_dot - params.b * th_dot * sin_th
    yg_dot = rates.y_dot + params.b * th_dot * cos_th
    r_rear = yg_dot * cos_th - xg_dot * sin_th - params.b * th_dot
    front = theta + state.psi
    r_front = (yg_dot * math.cos(front) - xg_dot * math.sin(front)
               + params.a * th_dot * math.cos(state.psi))
    return r_rear, r_front
