"""Hitch-force synthesis: kinematic trailer chain, replay files, sensor model.

The chain is kinematic (no yaw inertia): each trailer's yaw rate and speed
follow from its towing body through the off-axle recursion

    omega_i = (v_{i-1} sin g_i - d_i omega_{i-1} cos g_i) / l_i
    v_i     =  v_{i-1} cos g_i + d_i omega_{i-1} sin g_i

with g_i the hitch angle (towing-body heading minus trailer heading) and d_i
the hitch offset behind the towing body's axle.  d_i = 0 recovers the
classical on-axle recursion.

The hitch force is a quasi-static balance resolved from the last trailer
forward.  Each trailer demands, in its own frame, the force for its
longitudinal acceleration and rolling resistance plus the centripetal force
for its turn, with the rear hitch reaction rotated in.  Trailer wheel lateral
forces and yaw inertia are neglected, and longitudinal accelerations
propagate down the chain through the hitch-angle cosines.  This is a force
*model* chosen to be physically plausible, not ground truth; its defining
contract is the aligned-chain limit:

    H_x = (sum m_i) a + sign(v) c_rr g (sum m_i),   H_y = 0  on a straight line.

Sign convention matches the tractor dynamics: H_x > 0 resists the tractor,
H_y > 0 pushes the tractor's nose to its left.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, JackKnifeError
from .vehicle import HitchForce

GRAVITY = 9.81
JACKKNIFE_LIMIT = math.pi / 2
JACKKNIFE_WARN = 1.2


@dataclass(frozen=True)
class TrailerParams:
    """One trailer: mass, hitch offset d, drawbar length l, rolling resistance."""

    mass: float
    d: float = 0.5
    l: float = 2.0
    c_rr: float = 0.02

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("trailer mass must be positive")
        if self.l <= 0 or self.d < 0:
            raise ValueError("need drawbar length l > 0 and hitch offset d >= 0")
        if not 0 <= self.c_rr < 0.1:
            raise ValueError("rolling resistance coefficient out of range [0, 0.1)")


@dataclass(frozen=True)
class ChainState:
    """Absolute headings of the trailers, tractor-first ordering."""

    headings: tuple

    def __post_init__(self):
        object.__setattr__(self, "headings", tuple(float(h) for h in self.headings))

    def __len__(self):
        return len(self.headings)


def hitch_angles(tractor_theta, headings):
    """Relative angle at every hitch, towing body minus trailer."""
    gammas = []
    prev = tractor_theta
    for h in headings:
        gammas.append(prev - h)
        prev = h
    return gammas


def chain_rates(v0, tractor_theta, omega0, headings, trailers, t=None):
    """Per-trailer (omega_i, v_i) from the towing recursion.

    Raises JackKnifeError when any hitch angle reaches pi/2.
    """
    omegas, speeds = [], []
    v_prev, om_prev = v0, omega0
    prev_heading = tractor_theta
    for i, (h, par) in enumerate(zip(headings, trailers)):
        gamma = prev_heading - h
        if abs(gamma) >= JACKKNIFE_LIMIT:
            raise JackKnifeError(i, gamma, t)
        sg, cg = math.sin(gamma), math.cos(gamma)
        om = (v_prev * sg - par.d * om_prev * cg) / par.l
        v = v_prev * cg + par.d * om_prev * sg
        omegas.append(om)
        speeds.append(v)
        v_prev, om_prev, prev_heading = v, om, h
    return omegas, speeds


def chain_kinematics_step(v0, tractor_theta, omega0, chain: ChainState,
                          trailers, dt: float):
    """Advance the chain headings by dt under held tractor speed and yaw rate.

    The tractor heading advances linearly at omega0 within the RK4 stages,
    so towing on a steady circle settles onto the exact kinematic fixed
    point.  Returns (new ChainState, omegas, speeds) with the rates
    evaluated at the updated headings.
    """
    y = list(chain.headings)

    def f(s, headings):
        om, _ = chain_rates(v0, tractor_theta + omega0 * s, omega0, headings,
                            trailers)
        return om

    half = 0.5 * dt
    k1 = f(0.0, y)
    k2 = f(half, [h + half * k for h, k in zip(y, k1)])
    k3 = f(half, [h + half * k for h, k in zip(y, k2)])
    k4 = f(dt, [h + dt * k for h, k in zip(y, k3)])
    new = [h + dt / 6.0 * (a + 2 * b + 2 * c + d)
           for h, a, b, c, d in zip(y, k1, k2, k3, k4)]
    omegas, speeds = chain_rates(v0, tractor_theta + omega0 * dt, omega0, new,
                                 trailers)
    return ChainState(tuple(new)), omegas, speeds


def chain_force_affine(v_x, tractor_theta, omega0, headings, trailers, t=None):
    """Hitch force decomposed as H = base + slope * v_x_dot.

    Longitudinal acceleration passes down the chain through the hitch-angle
    cosines, so the quasi-static force is affine in the tractor's
    acceleration; the simulator uses the decomposition to close the coupled
    acceleration loop in closed form.  Returns (base_x, base_y, slope_x,
    slope_y, omegas) with the H sign convention of the tractor dynamics.
    """
    omegas, speeds = chain_rates(v_x, tractor_theta, omega0, headings,
                                 trailers, t)
    gammas = hitch_angles(tractor_theta, headings)

    cos_chain = []
    prod = 1.0
    for g in gammas:
        prod *= math.cos(g)
        cos_chain.append(prod)

    # force applied by body i-1 to trailer i, in frame i; accumulated from
    # the last trailer forward, base part and per-unit-acceleration part
    bx = by = ax = ay = 0.0
    for i in reversed(range(len(trailers))):
        par = trailers[i]
        v_i, om_i = speeds[i], omegas[i]
        roll = math.copysign(par.c_rr * GRAVITY * par.mass, v_i) if v_i != 0.0 else 0.0
        bx += roll
        by += par.mass * v_i * om_i
        ax += par.mass * cos_chain[i]
        g = gammas[i]
        cg, sg = math.cos(g), math.sin(g)
        # rotate into the towing body's frame (by -gamma_i)
        bx, by = cg * bx + sg * by, -sg * bx + cg * by
        ax, ay = cg * ax + sg * ay, -sg * ax + cg * ay
    # (bx, by) is now the pull the tractor applies, in the tractor frame;
    # the measured force is its reaction: H = (f_long, -f_lat)
    return bx, -by, ax, -ay, omegas


def quasi_static_hitch_force(v_x_dot, v_x, tractor_theta, omega0,
                             chain: ChainState, trailers, t=None) -> HitchForce:
    """Force the chain exerts on the tractor, resolved last trailer forward."""
    if not trailers:
        return HitchForce(0.0, 0.0)
    bx, by, ax, ay, _ = chain_force_affine(v_x, tractor_theta, omega0,
                                           chain.headings, trailers, t)
    return HitchForce(H_x=bx + ax * v_x_dot, H_y=by + ay * v_x_dot)


class ReplayTable:
    """Time-stamped hitch-force table, linearly interpolated."""

    def __init__(self, t, hx, hy):
        t = np.asarray(t, dtype=float)
        if t.size == 0:
            raise IngestionError("empty force profile")
        if np.any(np.diff(t) <= 0):
            raise IngestionError("force profile timestamps must be strictly increasing")
        self._t = t
        self._hx = np.asarray(hx, dtype=float)
        self._hy = np.asarray(hy, dtype=float)

    def force(self, t: float) -> HitchForce:
        """Interpolated force; constant extrapolation beyond the ends."""
        return HitchForce(float(np.interp(t, self._t, self._hx)),
                          float(np.interp(t, self._t, self._hy)))


def load_replay_csv(path) -> ReplayTable:
    """Read a `t,Hx,Hy` CSV force profile."""
    ts, hx, hy = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty force profile")
        if [h.strip() for h in header] != ["t", "Hx", "Hy"]:
            raise IngestionError(f"expected header 't,Hx,Hy', got {','.join(header)}", row=1)
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(f"expected 3 columns, got {len(row)}", row=i)
            try:
                ts.append(float(row[0]))
                hx.append(float(row[1]))
                hy.append(float(row[2]))
            except ValueError:
                raise IngestionError(f"non-numeric value in {row}", row=i) from None
    return ReplayTable(ts, hx, hy)


@dataclass(frozen=True)
class SensorModel:
    """Force sensor: sampled zero-order hold, bias, Gaussian noise, clamp."""

    noise_sigma: float = 0.0
    bias: float = 0.0
    sample_period: float = 0.02
    saturation: float = 50000.0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.sample_period <= 0 or self.saturation <= 0:
            raise ValueError("invalid sensor model parameters")


class ForceSensor:
    """Stateful sampler applying a SensorModel to the true hitch force.

    Deterministic given the generator passed in; no global randomness.
    """

    def __init__(self, model: SensorModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self._next_sample = -math.inf
        self._held = HitchForce(0.0, 0.0)

    def measure(self, t: float, truth: HitchForce) -> HitchForce:
        m = self.model
        if t >= self._next_sample:
            if m.noise_sigma > 0.0:
                nx, ny = self.rng.normal(0.0, m.noise_sigma, size=2)
            else:
                nx = ny = 0.0
            hx = min(max(truth.H_x + m.bias + nx, -m.saturation), m.saturation)
            hy = min(max(truth.H_y + m.bias + ny, -m.saturation), m.saturation)
            self._held = HitchForce(hx, hy)
            # next sampling instant on the model's own clock
            k = math.floor(t / m.sample_period + 1e-9) + 1
            self._next_sample = k * m.sample_period
        return self._held
