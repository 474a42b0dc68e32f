"""Exception types shared across the simulation and control stack."""


class TowsimError(Exception):
    """Base class for all library errors."""


class SingularSteeringError(TowsimError):
    """Steering angle too close to +/- pi/2 for the dynamics to be defined."""

    def __init__(self, psi, t=None):
        self.psi = psi
        self.t = t
        where = f" at t={t:.4f} s" if t is not None else ""
        super().__init__(f"steering angle {psi:.6f} rad is within the singular band{where}")


class MapDomainError(TowsimError):
    """Propulsion-map query outside the fitted (u1, v) validity region."""


class DegenerateMapError(TowsimError):
    """V^T-weighted map value too small to invert at the current speed."""

    def __init__(self, v_x, value):
        self.v_x = v_x
        self.value = value
        super().__init__(
            f"propulsion map is degenerate at v={v_x:.4f} m/s "
            f"(force per throttle unit {value:.3e})"
        )


class IllConditionedFitError(TowsimError):
    """Map fit cannot identify all six coefficients from the given samples."""


class IngestionError(TowsimError):
    """Malformed input file; carries the offending row when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class JackKnifeError(TowsimError):
    """A hitch angle reached the fold-over limit; the chain model is invalid."""

    def __init__(self, trailer_index, gamma, t=None):
        self.trailer_index = trailer_index
        self.gamma = gamma
        self.t = t
        where = f" at t={t:.4f} s" if t is not None else ""
        super().__init__(
            f"trailer {trailer_index} jack-knifed (hitch angle {gamma:.4f} rad){where}"
        )


class InvalidReferenceError(TowsimError):
    """Reference sample violates the controller's requirements (v_d <= 0)."""


class InfeasibleTrajectoryError(TowsimError):
    """Requested geometry is below the vehicle's minimum turning radius."""

    def __init__(self, radius, min_radius):
        self.radius = radius
        self.min_radius = min_radius
        super().__init__(
            f"radius {radius:.4f} m is below the minimum turning radius {min_radius:.4f} m"
        )


class ConfigError(TowsimError):
    """Scenario file or override rejected; message names the key or line."""


class PlantAbortError(TowsimError):
    """Simulation stopped early; wraps the plant error and time of occurrence."""

    def __init__(self, cause, t):
        self.cause = cause
        self.t = t
        super().__init__(f"plant aborted at t={t:.4f} s: {cause}")
