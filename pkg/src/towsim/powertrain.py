"""Throttle-to-force map, brake model, and the throttle/brake switch.

The propulsion force is linear in the throttle opening u1 and a fifth-order
polynomial in speed:  F_p = u1 * (b1 + b2 v + ... + b6 v^5).  Braking force is
proportional to brake pressure u3 through the (negative) ratio n_b, so u3 >= 0
always decelerates.  The switch policy picks throttle for a desired force
omega2 >= 0 and brake otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateMapError, IllConditionedFitError,
                     IngestionError, MapDomainError)

# Per-throttle-unit force below which inversion is refused.
EPS_MAP = 1e-6

# Coefficients identified for the default tractor; scenario files may
# substitute their own fitted map.
DEFAULT_MAP_COEFFS = (26.2, -9.999, 3.018, -1.041, 0.2354, -0.021)


@dataclass(frozen=True)
class PropulsionMap:
    """Six-coefficient throttle->force polynomial surface."""

    coeffs: tuple = DEFAULT_MAP_COEFFS
    u1_min: float = 0.0
    u1_max: float = 300.0
    v_max: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) != 6:
            raise ValueError("propulsion map needs exactly 6 coefficients")
        if self.u1_min < 0 or self.u1_max <= self.u1_min or self.v_max <= 0:
            raise ValueError("invalid map validity ranges")

    def force_per_unit(self, v_x: float) -> float:
        """Polynomial part V^T.coeffs, i.e. force per throttle unit at v_x."""
        acc = 0.0
        for c in reversed(self.coeffs):
            acc = acc * v_x + c
        return acc


@dataclass(frozen=True)
class BrakeParams:
    """Brake pressure to force ratio; n_b < 0 so u3 >= 0 decelerates."""

    n_b: float = -800.0

    def __post_init__(self):
        if self.n_b >= 0:
            raise ValueError("brake ratio n_b must be negative")


@dataclass(frozen=True)
class MapFitSample:
    u1: float
    v_x: float
    F_p: float

    def __post_init__(self):
        if self.u1 < 0 or self.v_x < 0:
            raise ValueError("fit samples need u1 >= 0 and v_x >= 0")


@dataclass(frozen=True)
class ThrottleCommand:
    u1: float
    saturated: bool


@dataclass(frozen=True)
class DriveCommand:
    """Resolved actuation for one control cycle."""

    mode: str               # "throttle" | "brake"
    u1: float
    u3: float
    F_d: float              # force actually realized by the actuator model
    saturated: bool


@dataclass(frozen=True)
class FitReport:
    coeffs: tuple
    rms_residual: float
    n_samples: int
    condition_number: float


def evaluate_map(pmap: PropulsionMap, u1: float, v_x: float) -> float:
    """Propulsion force for a throttle opening at a speed, no extrapolation."""
    if not pmap.u1_min <= u1 <= pmap.u1_max:
        raise MapDomainError(f"throttle {u1:.4f} outside [{pmap.u1_min}, {pmap.u1_max}]")
    if not 0.0 <= v_x <= pmap.v_max:
        raise MapDomainError(f"speed {v_x:.4f} outside [0, {pmap.v_max}]")
    return u1 * pmap.force_per_unit(v_x)


def invert_map(pmap: PropulsionMap, F_desired: float, v_x: float) -> ThrottleCommand:
    """Throttle opening that realizes F_desired at v_x, clamped to range."""
    if F_desired < 0:
        raise ValueError("invert_map expects a nonnegative desired force")
    if not 0.0 <= v_x <= pmap.v_max:
        raise MapDomainError(f"speed {v_x:.4f} outside [0, {pmap.v_max}]")
    per_unit = pmap.force_per_unit(v_x)
    if per_unit <= EPS_MAP:
        raise DegenerateMapError(v_x, per_unit)
    u1 = F_desired / per_unit
    if u1 < pmap.u1_min:
        return ThrottleCommand(pmap.u1_min, True)
    if u1 > pmap.u1_max:
        return ThrottleCommand(pmap.u1_max, True)
    return ThrottleCommand(u1, False)


def select_drive_actuation(omega2: float, pmap: PropulsionMap,
                           brake: BrakeParams, v_x: float,
                           u3_max: float = 40.0) -> DriveCommand:
    """Throttle/brake switch: throttle iff the desired force is >= 0."""
    if omega2 >= 0.0:
        cmd = invert_map(pmap, omega2, v_x)
        F_d = evaluate_map(pmap, cmd.u1, v_x)
        return DriveCommand("throttle", cmd.u1, 0.0, F_d, cmd.saturated)
    u3 = omega2 / brake.n_b
    saturated = u3 > u3_max
    if saturated:
        u3 = u3_max
    return DriveCommand("brake", 0.0, u3, u3 * brake.n_b, saturated)


def _distinct(values, tol=1e-9):
    out = []
    for v in sorted(values):
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def fit_map(samples, u1_range=(0.0, 300.0), v_max=None):
    """Least-squares fit of the six map coefficients.

    The model is linear in the coefficients: each sample contributes the
    regressor row u1 * [1, v, v^2, v^3, v^4, v^5].  Columns are equilibrated
    before the solve to keep the recovery accurate at high speed powers.

    Returns (PropulsionMap, FitReport).  Raises IllConditionedFitError when
    the samples cannot pin down all six coefficients, naming what is missing.
    """
    samples = list(samples)
    if not samples:
        raise IngestionError("no samples")
    if len(samples) < 6:
        raise IllConditionedFitError(
            f"need at least 6 samples to identify 6 coefficients, got {len(samples)}")

    active = [s for s in samples if s.u1 > 0]
    if not active:
        raise IllConditionedFitError("all samples have u1 = 0; nothing to fit")
    throttle_levels = _distinct([s.u1 for s in active])
    if len(throttle_levels) < 2:
        raise IllConditionedFitError(
            "rank-deficient fit: only one distinct throttle level "
            f"(u1={throttle_levels[0]:g}); linearity in throttle cannot be verified")
    speeds = _distinct([s.v_x for s in active])
    if len(speeds) < 6:
        missing = ", ".join(f"v^{k}" for k in range(len(speeds), 6))
        raise IllConditionedFitError(
            f"rank-deficient fit: only {len(speeds)} distinct speed(s); "
            f"directions {missing} are unidentifiable")

    A = np.array([[s.u1 * s.v_x ** k for k in range(6)] for s in samples])
    y = np.array([s.F_p for s in samples])
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0.0):
        bad = ", ".join(f"v^{k}" for k in np.nonzero(scale == 0.0)[0])
        raise IllConditionedFitError(f"rank-deficient fit: no excitation of {bad}")
    As = A / scale
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if sv[-1] < 1e-10 * sv[0]:
        # name the dominant speed powers of the unidentifiable direction
        _, _, vt = np.linalg.svd(As)
        null_dir = np.abs(vt[-1])
        bad = ", ".join(f"v^{k}" for k in np.nonzero(null_dir > 0.3)[0])
        raise IllConditionedFitError(
            f"rank-deficient fit: unidentifiable coefficient direction along {bad}")

    beta_s, _, _, _ = np.linalg.lstsq(As, y, rcond=None)
    beta = beta_s / scale
    residual = A @ beta - y
    rms = float(np.sqrt(np.mean(residual ** 2)))

    fitted_v_max = float(v_max if v_max is not None else max(s.v_x for s in samples))
    pmap = PropulsionMap(tuple(beta), u1_range[0], u1_range[1], fitted_v_max)
    return pmap, FitReport(tuple(beta), rms, len(samples), cond)


def read_fit_samples(path):
    """Load fit samples from a CSV file with header ``u1,v,F``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("no samples")
        if [h.strip() for h in header] != ["u1", "v", "F"]:
            raise IngestionError(f"expected header 'u1,v,F', got {','.join(header)}", row=1)
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise IngestionError(f"expected 3 columns, got {len(row)}", row=i)
            try:
                u1, v, F = (float(x) for x in row)
            except ValueError:
                raise IngestionError(f"non-numeric value in {row}", row=i) from None
            try:
                rows.append(MapFitSample(u1, v, F))
            except ValueError as exc:
                raise IngestionError(str(exc), row=i) from None
    if not rows:
        raise IngestionError("no samples")
    return rows
