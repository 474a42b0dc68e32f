"""Reference trajectories for the rear-axle point.

Generated trajectories are piecewise constant-curvature paths traversed with
a C^2 speed profile, so every sample carries analytic first and second
derivatives of both heading and speed (the steering law needs them).
Curvature jumps at segment junctions are permitted: heading acceleration is
then only piecewise continuous, which is all the controller requires.

Speed changes are blended with a quintic smoothstep, which is monotone and
C^2, so the speed never leaves the band spanned by its endpoints and always
stays positive.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTrajectoryError, IngestionError

V_FLOOR = 1e-3  # [m/s] the controller divides by v_d; keep it away from zero


@dataclass(frozen=True)
class ReferenceSample:
    """Reference pose, speed and their first/second derivatives at time t."""

    x_d: float
    y_d: float
    theta_d: float
    v_d: float
    theta_d_dot: float
    v_d_dot: float
    theta_d_ddot: float
    v_d_ddot: float


def min_turn_radius(L: float, psi_max: float) -> float:
    """Tightest circle the tractor can follow at full steering lock."""
    return L / math.tan(psi_max)


def _smoothstep(u):
    """Quintic smoothstep h and its first two derivatives on [0, 1]."""
    h = u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    dh = 30.0 * u * u * (u - 1.0) * (u - 1.0)
    ddh = 60.0 * u * (2.0 * u - 1.0) * (u - 1.0)
    return h, dh, ddh


def _smoothstep_integral(u):
    """Integral of the quintic smoothstep from 0 to u."""
    return u ** 4 * (2.5 + u * (-3.0 + u))


class SpeedProfile:
    """Piecewise-constant speed with smoothstep transitions.

    transitions: sequence of (t_start, t_end, target_speed), ascending and
    non-overlapping.  Speed holds each target until the next transition.
    """

    def __init__(self, base_speed, transitions=()):
        if base_speed <= V_FLOOR:
            raise ValueError(f"speed must exceed {V_FLOOR} m/s")
        pieces = []
        v_prev = float(base_speed)
        t_prev = 0.0
        for t0, t1, v_to in transitions:
            if t0 < t_prev or t1 <= t0:
                raise ValueError("speed transitions must be ascending and non-overlapping")
            if v_to <= V_FLOOR:
                raise ValueError(f"speed must exceed {V_FLOOR} m/s")
            pieces.append((float(t0), float(t1), v_prev, float(v_to)))
            v_prev = float(v_to)
            t_prev = t1
        self.base_speed = float(base_speed)
        self.pieces = pieces
        # cumulative distance at each piece start/end
        self._dist_marks = []
        dist = 0.0
        t_mark = 0.0
        v_cur = self.base_speed
        for (t0, t1, v_from, v_to) in pieces:
            dist += v_cur * (t0 - t_mark)
            d_trans = v_from * (t1 - t0) + (v_to - v_from) * (t1 - t0) * _smoothstep_integral(1.0)
            self._dist_marks.append((t0, dist, t1, dist + d_trans))
            dist += d_trans
            t_mark = t1
            v_cur = v_to

    def _locate(self, t):
        for i, (t0, t1, v_from, v_to) in enumerate(self.pieces):
            if t < t0:
                return i, None
            if t <= t1:
                return i, (t0, t1, v_from, v_to)
        return len(self.pieces), None

    def speed(self, t):
        i, piece = self._locate(t)
        if piece is None:
            return self.base_speed if i == 0 else self.pieces[i - 1][3]
        t0, t1, v_from, v_to = piece
        h, _, _ = _smoothstep((t - t0) / (t1 - t0))
        return v_from + (v_to - v_from) * h

    def speed_derivatives(self, t):
        """(v, v_dot, v_ddot) at time t."""
        i, piece = self._locate(t)
        if piece is None:
            v = self.base_speed if i == 0 else self.pieces[i - 1][3]
            return v, 0.0, 0.0
        t0, t1, v_from, v_to = piece
        dt = t1 - t0
        h, dh, ddh = _smoothstep((t - t0) / dt)
        dv = v_to - v_from
        return v_from + dv * h, dv * dh / dt, dv * ddh / (dt * dt)

    def distance(self, t):
        """Arc length travelled by time t."""
        i, piece = self._locate(t)
        if piece is None:
            if i == 0:
                return self.base_speed * t
            t0, d0, t1, d1 = self._dist_marks[i - 1]
            return d1 + self.pieces[i - 1][3] * (t - t1)
        t0, t1, v_from, v_to = piece
        d_start = self._dist_marks[i][1]
        u = (t - t0) / (t1 - t0)
        return d_start + v_from * (t - t0) + (v_to - v_from) * (t1 - t0) * _smoothstep_integral(u)


@dataclass(frozen=True)
class _Segment:
    length: float     # arc length; math.inf allowed for the last segment
    kappa: float
    x0: float
    y0: float
    theta0: float

    def pose(self, u):
        """Pose u meters into the segment."""
        if self.kappa == 0.0:
            return (self.x0 + u * math.cos(self.theta0),
                    self.y0 + u * math.sin(self.theta0),
                    self.theta0)
        theta = self.theta0 + self.kappa * u
        x = self.x0 + (math.sin(theta) - math.sin(self.theta0)) / self.kappa
        y = self.y0 - (math.cos(theta) - math.cos(self.theta0)) / self.kappa
        return x, y, theta


class Trajectory:
    """A path of constant-curvature segments traversed by a speed profile."""

    def __init__(self, segments, profile, closed=False):
        if not segments:
            raise ValueError("need at least one segment")
        self.segments = list(segments)
        self.profile = profile
        self.closed = closed
        self._starts = [0.0]
        for seg in self.segments[:-1]:
            if math.isinf(seg.length):
                raise ValueError("only the last segment may be infinite")
            self._starts.append(self._starts[-1] + seg.length)
        self.total_length = self._starts[-1] + self.segments[-1].length
        if closed:
            if math.isinf(self.total_length):
                raise ValueError("a closed path cannot contain an infinite segment")
            x1, y1, th1 = self.segments[-1].pose(self.segments[-1].length)
            x0, y0, th0 = self.segments[0].x0, self.segments[0].y0, self.segments[0].theta0
            if (abs(x1 - x0) > 1e-9 or abs(y1 - y0) > 1e-9
                    or abs(th1 - th0) > 1e-9):
                raise ValueError("closed path does not return to its start pose")
        elif not math.isinf(self.segments[-1].length):
            raise ValueError("an open path must end with an infinite segment")

    def _pose_at(self, s):
        if self.closed:
            s = math.fmod(s, self.total_length)
        i = bisect.bisect_right(self._starts, s) - 1
        return self.segments[i], s - self._starts[i]

    def sample(self, t: float) -> ReferenceSample:
        """Reference sample at time t >= 0."""
        if t < 0:
            raise ValueError("trajectory is defined for t >= 0 only")
        v, v_dot, v_ddot = self.profile.speed_derivatives(t)
        s = self.profile.distance(t)
        seg, u = self._pose_at(s)
        x, y, theta = seg.pose(u)
        return ReferenceSample(
            x_d=x, y_d=y, theta_d=theta, v_d=v,
            theta_d_dot=seg.kappa * v, v_d_dot=v_dot,
            theta_d_ddot=seg.kappa * v_dot, v_d_ddot=v_ddot,
        )


def _check_radius(radius, min_radius):
    if radius <= 0:
        raise ValueError("radius must be positive")
    if min_radius is not None and radius <= min_radius:
        raise InfeasibleTrajectoryError(radius, min_radius)


def _profile(speed, slowdowns):
    return SpeedProfile(speed, [(s["t_start"], s["t_end"], s["speed"]) for s in slowdowns])


def make_line(speed, heading=0.0, start=(0.0, 0.0), slowdowns=()):
    seg = _Segment(math.inf, 0.0, start[0], start[1], heading)
    return Trajectory([seg], _profile(speed, slowdowns))


def make_circle(radius, speed, ccw=True, min_radius=None, slowdowns=()):
    _check_radius(radius, min_radius)
    kappa = (1.0 if ccw else -1.0) / radius
    seg = _Segment(math.inf, kappa, 0.0, 0.0, 0.0)
    return Trajectory([seg], _profile(speed, slowdowns))


def make_figure_eight(radius, speed, min_radius=None, slowdowns=()):
    """Two tangent circles traversed in opposite senses; heading rate flips
    sign exactly at the crossover point."""
    _check_radius(radius, min_radius)
    circumference = 2.0 * math.pi * radius
    first = _Segment(circumference, 1.0 / radius, 0.0, 0.0, 0.0)
    # second loop unwinds the full turn of the first; net heading change is
    # zero so the closed path is heading-continuous across periods
    second = _Segment(circumference, -1.0 / radius, *first.pose(circumference))
    return Trajectory([first, second], _profile(speed, slowdowns), closed=True)


def make_s_curve(radius, speed, arc_angle=0.6, lead_in=5.0, min_radius=None,
                 slowdowns=()):
    """Straight lead-in, a left arc, a matching right arc, then straight."""
    _check_radius(radius, min_radius)
    if not 0 < arc_angle < math.pi:
        raise ValueError("arc_angle must lie in (0, pi)")
    segs = [_Segment(lead_in, 0.0, 0.0, 0.0, 0.0)]
    arc_len = radius * arc_angle
    left = _Segment(arc_len, 1.0 / radius, *segs[0].pose(lead_in))
    segs.append(left)
    right = _Segment(arc_len, -1.0 / radius, *left.pose(arc_len))
    segs.append(right)
    segs.append(_Segment(math.inf, 0.0, *right.pose(arc_len)))
    return Trajectory(segs, _profile(speed, slowdowns))


_GENERATORS = {
    "line": make_line,
    "circle": make_circle,
    "figure_eight": make_figure_eight,
    "s_curve": make_s_curve,
}


def make_generator(kind, **kwargs):
    """Dispatch to one of the analytic generators by name."""
    try:
        factory = _GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown trajectory kind {kind!r}; "
                         f"choose from {sorted(_GENERATORS)}") from None
    return factory(**kwargs)


class FileTrajectory:
    """Trajectory loaded from a CSV of timestamped positions.

    Heading, speed and their derivatives are recovered by cubic-spline
    differentiation of x(t) and y(t) at the sample knots (after an optional
    centered moving-average smoothing of window `smooth_window`), with the
    heading unwrapped before re-splining.  The result is approximate: second
    derivatives inherit the spline's piecewise-linear curvature.
    """

    def __init__(self, t, x, y, smooth_window=0):
        from scipy.interpolate import CubicSpline

        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(t) < 4:
            raise IngestionError("need at least 4 trajectory points")
        if np.any(np.diff(t) <= 0):
            raise IngestionError("timestamps must be strictly increasing")
        if smooth_window:
            if smooth_window % 2 == 0:
                raise ValueError("smooth_window must be odd")
            kernel = np.ones(smooth_window) / smooth_window
            pad = smooth_window // 2
            x = np.convolve(np.pad(x, pad, mode="edge"), kernel, mode="valid")
            y = np.convolve(np.pad(y, pad, mode="edge"), kernel, mode="valid")
        self.t0, self.t1 = float(t[0]), float(t[-1])
        self._sx = CubicSpline(t, x)
        self._sy = CubicSpline(t, y)
        xd = self._sx(t, 1)
        yd = self._sy(t, 1)
        v = np.hypot(xd, yd)
        if np.any(v <= V_FLOOR):
            raise IngestionError(f"trajectory speed drops to {v.min():.4g} m/s; "
                                 f"must stay above {V_FLOOR}")
        theta = np.unwrap(np.arctan2(yd, xd))
        self._stheta = CubicSpline(t, theta)
        self._sv = CubicSpline(t, v)

    @property
    def horizon(self):
        return self.t1

    def sample(self, t: float) -> ReferenceSample:
        if t < 0:
            raise ValueError("trajectory is defined for t >= 0 only")
        if not self.t0 <= t <= self.t1:
            raise ValueError(f"t={t} outside trajectory horizon [{self.t0}, {self.t1}]")
        return ReferenceSample(
            x_d=float(self._sx(t)), y_d=float(self._sy(t)),
            theta_d=float(self._stheta(t)), v_d=float(self._sv(t)),
            theta_d_dot=float(self._stheta(t, 1)), v_d_dot=float(self._sv(t, 1)),
            theta_d_ddot=float(self._stheta(t, 2)), v_d_ddot=float(self._sv(t, 2)),
        )


def load_trajectory_csv(path, smooth_window=0):
    """Read a `t,x,y` CSV (extra columns ignored) into a FileTrajectory."""
    ts, xs, ys = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty trajectory file")
        names = [h.strip() for h in header]
        if names[:3] != ["t", "x", "y"]:
            raise IngestionError(f"expected header starting 't,x,y', got {','.join(names)}", row=1)
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(float(row[0]))
                xs.append(float(row[1]))
                ys.append(float(row[2]))
            except (ValueError, IndexError):
                raise IngestionError(f"malformed trajectory row {row}", row=i) from None
    return FileTrajectory(ts, xs, ys, smooth_window=smooth_window)


def write_trajectory_csv(traj, path, duration, rate):
    """Sample a trajectory at a fixed rate and write `t,x,y,theta,v` rows."""
    n = round(duration * rate)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "theta", "v"])
        for i in range(n + 1):
            t = i / rate
            ref = traj.sample(t)
            writer.writerow([repr(t), repr(ref.x_d), repr(ref.y_d),
                             repr(ref.theta_d), repr(ref.v_d)])
    return n + 1
