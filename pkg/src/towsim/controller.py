"""Tracking control: Frenet errors, virtual controls, backstepped steering.

The cascade: posture/velocity errors in a frame attached to the reference
point -> virtual curvature and force targets (omega1, omega2) that stabilize
the error subsystem -> a steering command that backsteps the actual
curvature state c_psi = tan(psi)/L onto omega1, while the throttle/brake
switch realizes omega2 through the propulsion map or the brake ratio.

omega2 contains the measured hitch force directly: the pull of the trailers
is cancelled feedforward instead of being estimated or modelled.

The ratios sin(th)/th and (1-cos(th))/th that appear in omega1 (and their
derivatives, needed for the analytic rate of omega1) have removable
singularities at th = 0 and are evaluated by Taylor series near zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidReferenceError, TowsimError
from .powertrain import BrakeParams, PropulsionMap, select_drive_actuation
from .trajectory import ReferenceSample
from .vehicle import HitchForce, TractorParams, TractorState, phi_terms

# Below this |theta_e| the series branch is used; both branches agree to
# better than 1e-12 at the switch point.
THETA_SWITCH = 1e-2


@dataclass(frozen=True)
class ControllerGains:
    k_theta: float = 1.0
    k_v: float = 2.0
    k_psi: float = 5.0

    def __post_init__(self):
        if self.k_theta <= 0 or self.k_v <= 0 or self.k_psi <= 0:
            raise ValueError("all controller gains must be strictly positive")


@dataclass(frozen=True)
class TrackingError:
    x_e: float
    y_e: float
    theta_e: float
    v_e: float


@dataclass(frozen=True)
class BackstepState:
    c_psi: float
    delta_psi: float


@dataclass(frozen=True)
class VirtualControl:
    omega1: float   # curvature-like target [1/m]
    omega2: float   # drive-force target [N]


@dataclass(frozen=True)
class ControlOutput:
    """One controller cycle: actuation plus diagnostics."""

    mode: str
    u1: float
    u2: float
    u3: float
    omega1: float
    omega2: float
    delta_psi: float
    v1: float
    v2: float
    sat_u1: bool
    sat_u2: bool
    sat_u3: bool
    psi_dot_est: float
    error: TowsimError | None = None


def error_transform(state: TractorState, ref: ReferenceSample) -> TrackingError:
    """Posture and speed errors in the reference-attached frame."""
    dx = state.x - ref.x_d
    dy = state.y - ref.y_d
    c, s = math.cos(ref.theta_d), math.sin(ref.theta_d)
    return TrackingError(
        x_e=dx * c + dy * s,
        y_e=dy * c - dx * s,
        theta_e=state.theta - ref.theta_d,
        v_e=state.v_x - ref.v_d,
    )


def inverse_error_transform(err: TrackingError, ref: ReferenceSample,
                            psi: float = 0.0) -> TractorState:
    """Reconstruct the tractor state realizing the given errors."""
    c, s = math.cos(ref.theta_d), math.sin(ref.theta_d)
    return TractorState(
        x=ref.x_d + err.x_e * c - err.y_e * s,
        y=ref.y_d + err.x_e * s + err.y_e * c,
        theta=ref.theta_d + err.theta_e,
        v_x=ref.v_d + err.v_e,
        psi=psi,
    )


def sinc_like(theta_e: float):
    """(s1, s2, s1', s2') with s1 = sin(th)/th and s2 = (1-cos(th))/th.

    Series branch below THETA_SWITCH; elsewhere direct formulas with the
    half-angle form of 1-cos to avoid cancellation.
    """
    th = theta_e
    if abs(th) < THETA_SWITCH:
        th2 = th * th
        s1 = 1.0 - th2 / 6.0 + th2 * th2 / 120.0 - th2 * th2 * th2 / 5040.0
        s2 = th / 2.0 - th * th2 / 24.0 + th * th2 * th2 / 720.0
        ds1 = -th / 3.0 + th * th2 / 30.0 - th * th2 * th2 / 840.0
        ds2 = 0.5 - th2 / 8.0 + th2 * th2 / 144.0
        return s1, s2, ds1, ds2
    sin_th = math.sin(th)
    one_minus_cos = 2.0 * math.sin(0.5 * th) ** 2
    s1 = sin_th / th
    s2 = one_minus_cos / th
    ds1 = (th * math.cos(th) - sin_th) / (th * th)
    ds2 = (sin_th - s2) / th
    return s1, s2, ds1, ds2


def _omega1(x_e, y_e, theta_e, k_theta, ratio):
    """ratio = theta_d_dot / v_d."""
    s1, s2, _, _ = sinc_like(theta_e)
    return x_e * s2 - y_e * s1 - k_theta * theta_e + ratio


def error_rates(err: TrackingError, ref: ReferenceSample, v_x: float,
                c_psi: float):
    """(x_e_dot, y_e_dot, theta_e_dot) along the closed-loop flow."""
    xe_dot = v_x * math.cos(err.theta_e) + ref.theta_d_dot * err.y_e - ref.v_d
    ye_dot = v_x * math.sin(err.theta_e) - ref.theta_d_dot * err.x_e
    te_dot = v_x * c_psi - ref.theta_d_dot
    return xe_dot, ye_dot, te_dot


def virtual_control(err: TrackingError, ref: ReferenceSample,
                    hitch: HitchForce, coeffs, gains: ControllerGains) -> VirtualControl:
    """Curvature and force targets stabilizing the error subsystem."""
    if ref.v_d <= 0:
        raise InvalidReferenceError(f"reference speed must be positive, got {ref.v_d}")
    ratio = ref.theta_d_dot / ref.v_d
    omega1 = _omega1(err.x_e, err.y_e, err.theta_e, gains.k_theta, ratio)
    omega2 = hitch.H_x + (1.0 / coeffs.phi2) * (
        coeffs.phi3 * hitch.H_y - coeffs.phi1 + ref.v_d_dot
        - gains.k_v * err.v_e - err.x_e
        + gains.k_theta * err.theta_e ** 2 - ratio * err.theta_e)
    return VirtualControl(omega1, omega2)


def omega1_dot(err: TrackingError, ref: ReferenceSample, gains: ControllerGains,
               rates) -> float:
    """Analytic time derivative of omega1 along the flow.

    `rates` is the (x_e_dot, y_e_dot, theta_e_dot) triple from error_rates;
    the reference contributes d/dt(theta_d_dot / v_d) through its second
    derivatives.
    """
    if ref.v_d <= 0:
        raise InvalidReferenceError(f"reference speed must be positive, got {ref.v_d}")
    xe_dot, ye_dot, te_dot = rates
    s1, s2, ds1, ds2 = sinc_like(err.theta_e)
    ratio_dot = (ref.theta_d_ddot / ref.v_d
                 - ref.theta_d_dot * ref.v_d_dot / (ref.v_d * ref.v_d))
    return (xe_dot * s2 + err.x_e * ds2 * te_dot
            - ye_dot * s1 - err.y_e * ds1 * te_dot
            - gains.k_theta * te_dot + ratio_dot)


def steering_law(backstep: BackstepState, omega1_dot_value: float,
                 err: TrackingError, state: TractorState,
                 params: TractorParams, gains: ControllerGains):
    """Backstepping steering command, clamped to the mechanical limit.

    Returns (u2, saturated).
    """
    gain = 1.0 / params.L + params.L * backstep.c_psi ** 2
    u2 = (params.tau / gain) * (omega1_dot_value - state.v_x * err.theta_e
                                - gains.k_psi * backstep.delta_psi) + state.psi
    if u2 > params.psi_max:
        return params.psi_max, True
    if u2 < -params.psi_max:
        return -params.psi_max, True
    return u2, False


def lyapunov_v1(err: TrackingError) -> float:
    return 0.5 * (err.x_e ** 2 + err.y_e ** 2 + err.theta_e ** 2 + err.v_e ** 2)


class TrackingController:
    """Discrete controller with one cycle of memory (the last steering command).

    psi_rate_source selects how the steering rate needed by the coefficient
    phi1 is obtained: "previous_command" reconstructs it from the last
    steering command through the actuator lag model (the physical sensor set
    provides no rate measurement); "true_rate" uses a rate supplied by the
    caller, for ablation studies.

    compensate_hitch=False zeroes the measured-force terms of omega2 (the
    feedback gains remain), for quantifying what the force feedforward buys.
    """

    def __init__(self, params: TractorParams, gains: ControllerGains,
                 pmap: PropulsionMap, brake: BrakeParams,
                 psi_rate_source: str = "previous_command",
                 compensate_hitch: bool = True):
        if psi_rate_source not in ("previous_command", "true_rate"):
            raise ValueError(f"unknown psi_rate_source {psi_rate_source!r}")
        self.params = params
        self.gains = gains
        self.pmap = pmap
        self.brake = brake
        self.psi_rate_source = psi_rate_source
        self.compensate_hitch = compensate_hitch
        self._u2_prev = None

    def reset(self):
        self._u2_prev = None

    def control_step(self, state: TractorState, ref: ReferenceSample,
                     hitch: HitchForce, psi_dot_true: float | None = None) -> ControlOutput:
        """One full control cycle; never raises, errors become a safe stop."""
        p, g = self.params, self.gains
        try:
            err = error_transform(state, ref)
            if ref.v_d <= 0:
                raise InvalidReferenceError(
                    f"reference speed must be positive, got {ref.v_d}")

            c_psi = math.tan(state.psi) / p.L
            ratio = ref.theta_d_dot / ref.v_d
            omega1 = _omega1(err.x_e, err.y_e, err.theta_e, g.k_theta, ratio)
            delta_psi = c_psi - omega1
            rates = error_rates(err, ref, state.v_x, c_psi)
            o1_dot = omega1_dot(err, ref, g, rates)
            u2, sat_u2 = steering_law(BackstepState(c_psi, delta_psi), o1_dot,
                                      err, state, p, g)

            if self.psi_rate_source == "true_rate":
                if psi_dot_true is None:
                    raise ValueError("true_rate source needs psi_dot_true")
                psi_dot = psi_dot_true
            else:
                u2_prev = self._u2_prev if self._u2_prev is not None else state.psi
                psi_dot = (u2_prev - state.psi) / p.tau

            phi1, phi2, phi3, _ = phi_terms(p.m, p.J, p.b, p.L, p.c,
                                            state.psi, psi_dot, state.v_x)
            hx, hy = (hitch.H_x, hitch.H_y) if self.compensate_hitch else (0.0, 0.0)
            omega2 = hx + (1.0 / phi2) * (
                phi3 * hy - phi1 + ref.v_d_dot - g.k_v * err.v_e - err.x_e
                + g.k_theta * err.theta_e ** 2 - ratio * err.theta_e)

            drive = select_drive_actuation(omega2, self.pmap, self.brake,
                                           state.v_x, p.u3_max)
            v1 = lyapunov_v1(err)
            self._u2_prev = u2
            return ControlOutput(
                mode=drive.mode, u1=drive.u1, u2=u2, u3=drive.u3,
                omega1=omega1, omega2=omega2, delta_psi=delta_psi,
                v1=v1, v2=v1 + 0.5 * delta_psi ** 2,
                sat_u1=drive.mode == "throttle" and drive.saturated,
                sat_u2=sat_u2,
                sat_u3=drive.mode == "brake" and drive.saturated,
                psi_dot_est=psi_dot,
            )
        except TowsimError as exc:
            # safe stop: release throttle, half brake, hold steering
            self._u2_prev = state.psi
            return ControlOutput(
                mode="brake", u1=0.0, u2=state.psi, u3=p.u3_max / 2.0,
                omega1=math.nan, omega2=math.nan, delta_psi=math.nan,
                v1=math.nan, v2=math.nan,
                sat_u1=False, sat_u2=False, sat_u3=False,
                psi_dot_est=0.0, error=exc,
            )
