"""Scenario files: strict YAML schema -> a ready-to-run SimConfig.

Parsing is strict on purpose: an unknown or misspelled key anywhere in the
file is an error, because a silently ignored physics parameter is the worst
kind of bug.  Command-line overrides use dotted paths mirroring the schema
(e.g. ``gains.k_v=3.0``) and are applied to the raw tree before validation,
so an override can never bypass an invariant check.

Input files referenced by a scenario (replay tables, trajectory CSVs, map
files) resolve relative to the scenario file's directory; output paths
resolve relative to the working directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import yaml

from .controller import ControllerGains, TrackingError, inverse_error_transform
from .errors import ConfigError, TowsimError
from .powertrain import BrakeParams, PropulsionMap
from .simulation import SimConfig
from .trailers import SensorModel, TrailerParams, load_replay_csv
from .trajectory import (load_trajectory_csv, make_circle, make_figure_eight,
                         make_line, make_s_curve, min_turn_radius)
from .vehicle import TractorParams, TractorState


@dataclass
class Scenario:
    """A parsed scenario: the run config plus audit and output settings."""

    cfg: SimConfig
    audit_max_violations: int
    audit_exclude_saturated: bool
    output_log: str | None
    output_summary: str | None


class _Section:
    """Dict wrapper that tracks consumed keys and reports leftovers."""

    def __init__(self, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'file root'}: expected a mapping")
        self.data = dict(data)
        self.path = path

    def _key(self, name):
        return f"{self.path}.{name}" if self.path else name

    def take(self, name, kind, default=None, required=False):
        if name not in self.data:
            if required:
                raise ConfigError(f"missing required key {self._key(name)}")
            return default
        value = self.data.pop(name)
        if value is None:
            return default
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{self._key(name)}: expected a number, got {value!r}")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{self._key(name)}: expected an integer, got {value!r}")
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{self._key(name)}: expected true/false, got {value!r}")
            return value
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(f"{self._key(name)}: expected a string, got {value!r}")
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ConfigError(f"{self._key(name)}: expected a list, got {value!r}")
            return value
        raise AssertionError(kind)

    def take_raw(self, name, default=None):
        return self.data.pop(name, default)

    def section(self, name):
        return _Section(self.data.pop(name, None), self._key(name))

    def done(self):
        if self.data:
            keys = ", ".join(sorted(self._key(k) for k in self.data))
            raise ConfigError(f"unknown key(s): {keys}")


def apply_overrides(tree, overrides):
    """Apply ``path.to.key=value`` overrides to the raw scenario tree."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        dotted, _, raw = item.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"override {item!r}: unparsable value") from None
        node = tree
        parts = dotted.split(".")
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {dotted!r}: {p} is not a mapping")
            node = nxt
        node[parts[-1]] = value
    return tree


def _build_tractor(sec):
    try:
        params = TractorParams(
            m=sec.take("m", float, 3000.0),
            J=sec.take("J", float, 4000.0),
            a=sec.take("a", float, 1.0),
            b=sec.take("b", float, 1.0),
            c=sec.take("c", float, 0.5),
            tau=sec.take("tau", float, 0.2),
            psi_max=sec.take("psi_max", float, 0.55),
            u1_min=sec.take("u1_min", float, 0.0),
            u1_max=sec.take("u1_max", float, 300.0),
            u3_max=sec.take("u3_max", float, 40.0),
        )
    except ValueError as exc:
        raise ConfigError(f"tractor: {exc}") from None
    sec.done()
    return params


def load_map_file(path):
    """Read a fitted propulsion-map file (as written by the fit-map command)."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"map file {path}: {exc}") from None
    sec = _Section(data, "map")
    coeffs = sec.take("coeffs", list, required=True)
    pmap = PropulsionMap(
        coeffs=tuple(coeffs),
        u1_min=sec.take("u1_min", float, 0.0),
        u1_max=sec.take("u1_max", float, 300.0),
        v_max=sec.take("v_max", float, 5.0),
    )
    sec.take("rms_residual", float, 0.0)
    sec.take("n_samples", int, 0)
    sec.done()
    return pmap


def write_map_file(path, pmap, report=None):
    data = {
        "coeffs": [float(c) for c in pmap.coeffs],
        "u1_min": pmap.u1_min,
        "u1_max": pmap.u1_max,
        "v_max": pmap.v_max,
    }
    if report is not None:
        data["rms_residual"] = report.rms_residual
        data["n_samples"] = report.n_samples
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def _build_propulsion(sec, base_dir, tractor):
    file_ = sec.take("file", str)
    coeffs = sec.take("coeffs", list)
    if file_ is not None and coeffs is not None:
        raise ConfigError("propulsion: give either coeffs or file, not both")
    if file_ is not None:
        sec.done()
        return load_map_file(os.path.join(base_dir, file_))
    try:
        pmap = PropulsionMap(
            coeffs=tuple(coeffs) if coeffs is not None else PropulsionMap().coeffs,
            u1_min=tractor.u1_min,
            u1_max=tractor.u1_max,
            v_max=sec.take("v_max", float, 5.0),
        )
    except ValueError as exc:
        raise ConfigError(f"propulsion: {exc}") from None
    sec.done()
    return pmap


def _build_trailers(raw):
    trailers = []
    for i, item in enumerate(raw):
        sec = _Section(item, f"trailers[{i}]")
        try:
            trailers.append(TrailerParams(
                mass=sec.take("mass", float, required=True),
                d=sec.take("d", float, 0.5),
                l=sec.take("l", float, 2.0),
                c_rr=sec.take("c_rr", float, 0.02),
            ))
        except ValueError as exc:
            raise ConfigError(f"trailers[{i}]: {exc}") from None
        sec.done()
    return tuple(trailers)


def _build_slowdowns(raw, path):
    out = []
    for i, item in enumerate(raw):
        sec = _Section(item, f"{path}[{i}]")
        out.append({
            "t_start": sec.take("t_start", float, required=True),
            "t_end": sec.take("t_end", float, required=True),
            "speed": sec.take("speed", float, required=True),
        })
        sec.done()
    return out


def _build_trajectory(sec, base_dir, tractor):
    kind = sec.take("kind", str, required=True)
    slowdowns = _build_slowdowns(sec.take("slowdowns", list, []), "trajectory.slowdowns")
    min_r = min_turn_radius(tractor.L, tractor.psi_max)
    try:
        if kind == "line":
            traj = make_line(
                speed=sec.take("speed", float, required=True),
                heading=sec.take("heading", float, 0.0),
                start=(sec.take("x0", float, 0.0), sec.take("y0", float, 0.0)),
                slowdowns=slowdowns)
        elif kind == "circle":
            traj = make_circle(
                radius=sec.take("radius", float, required=True),
                speed=sec.take("speed", float, required=True),
                ccw=sec.take("ccw", bool, True),
                min_radius=min_r, slowdowns=slowdowns)
        elif kind == "figure_eight":
            traj = make_figure_eight(
                radius=sec.take("radius", float, required=True),
                speed=sec.take("speed", float, required=True),
                min_radius=min_r, slowdowns=slowdowns)
        elif kind == "s_curve":
            traj = make_s_curve(
                radius=sec.take("radius", float, required=True),
                speed=sec.take("speed", float, required=True),
                arc_angle=sec.take("arc_angle", float, 0.6),
                lead_in=sec.take("lead_in", float, 5.0),
                min_radius=min_r, slowdowns=slowdowns)
        elif kind == "file":
            path = sec.take("path", str, required=True)
            traj = load_trajectory_csv(
                os.path.join(base_dir, path),
                smooth_window=sec.take("smooth_window", int, 0))
        else:
            raise ConfigError(f"trajectory.kind: unknown kind {kind!r}")
    except (ValueError, TowsimError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"trajectory: {exc}") from None
    sec.done()
    return traj


def load_scenario(path, overrides=()) -> Scenario:
    """Parse and validate a scenario file, returning a runnable Scenario."""
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario {path}: {exc}") from None
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"scenario {path}: top level must be a mapping")
    apply_overrides(tree, overrides)
    root = _Section(tree, "")

    name = root.take("name", str, os.path.splitext(os.path.basename(path))[0])
    tractor = _build_tractor(root.section("tractor"))
    pmap = _build_propulsion(root.section("propulsion"), base_dir, tractor)

    brake_sec = root.section("brake")
    try:
        brake = BrakeParams(n_b=brake_sec.take("n_b", float, -800.0))
    except ValueError as exc:
        raise ConfigError(f"brake: {exc}") from None
    brake_sec.done()

    trailers = _build_trailers(root.take("trailers", list, []))
    force_provider = root.take("force_provider", str, "chain" if trailers else "none")
    replay_file = root.take("replay_file", str)
    replay = None
    if force_provider == "replay":
        if replay_file is None:
            raise ConfigError("force_provider=replay needs replay_file")
        replay = load_replay_csv(os.path.join(base_dir, replay_file))

    sensor_sec = root.section("sensor")
    try:
        sensor = SensorModel(
            noise_sigma=sensor_sec.take("noise_sigma", float, 0.0),
            bias=sensor_sec.take("bias", float, 0.0),
            sample_period=sensor_sec.take("sample_period", float, 0.02),
            saturation=sensor_sec.take("saturation", float, 50000.0),
        )
    except ValueError as exc:
        raise ConfigError(f"sensor: {exc}") from None
    sensor_sec.done()

    trajectory = _build_trajectory(root.section("trajectory"), base_dir, tractor)

    gains_sec = root.section("gains")
    try:
        gains = ControllerGains(
            k_theta=gains_sec.take("k_theta", float, 1.0),
            k_v=gains_sec.take("k_v", float, 2.0),
            k_psi=gains_sec.take("k_psi", float, 5.0),
        )
    except ValueError as exc:
        raise ConfigError(f"gains: {exc}") from None
    gains_sec.done()

    ctrl_sec = root.section("controller")
    psi_rate_source = ctrl_sec.take("psi_rate_source", str, "previous_command")
    if psi_rate_source not in ("previous_command", "true_rate"):
        raise ConfigError(f"controller.psi_rate_source: unknown value {psi_rate_source!r}")
    compensate = ctrl_sec.take("compensate_hitch", bool, True)
    on_error = ctrl_sec.take("on_error", str, "abort")
    ctrl_sec.done()

    sim_sec = root.section("sim")
    dt_physics = sim_sec.take("dt_physics", float, 1e-3)
    dt_control = sim_sec.take("dt_control", float, 2e-2)
    duration = sim_sec.take("duration", float, required=True)
    seed = sim_sec.take("seed", int, 0)
    actuation = sim_sec.take("actuation", str, "zoh")
    log_decimation = sim_sec.take("log_decimation", int, 1)
    sim_sec.done()

    init_sec = root.section("initial")
    psi0 = init_sec.take("psi", float, 0.0)
    if abs(psi0) > tractor.psi_max:
        raise ConfigError(f"initial.psi exceeds the steering limit {tractor.psi_max}")
    hitch_angles = init_sec.take("hitch_angles", list, [0.0] * len(trailers))
    err_raw = init_sec.take_raw("error")
    state_raw = init_sec.take_raw("state")
    if err_raw is not None and state_raw is not None:
        raise ConfigError("initial: give either error or state, not both")
    if state_raw is not None:
        ssec = _Section(state_raw, "initial.state")
        initial_state = TractorState(
            x=ssec.take("x", float, 0.0), y=ssec.take("y", float, 0.0),
            theta=ssec.take("theta", float, 0.0),
            v_x=ssec.take("v_x", float, 0.0), psi=psi0)
        ssec.done()
    else:
        esec = _Section(err_raw, "initial.error")
        err = TrackingError(
            x_e=esec.take("x_e", float, 0.0), y_e=esec.take("y_e", float, 0.0),
            theta_e=esec.take("theta_e", float, 0.0),
            v_e=esec.take("v_e", float, 0.0))
        esec.done()
        initial_state = inverse_error_transform(err, trajectory.sample(0.0), psi0)
    init_sec.done()

    audit_sec = root.section("audit")
    v2_tol = audit_sec.take("v2_step_tolerance", float, 1e-6)
    audit_max_violations = audit_sec.take("max_violations", int, 0)
    audit_exclude_saturated = audit_sec.take("exclude_saturated", bool, True)
    audit_sec.done()

    out_sec = root.section("output")
    output_log = out_sec.take("log", str)
    output_summary = out_sec.take("summary", str)
    out_sec.done()

    root.done()

    horizon = getattr(trajectory, "horizon", math.inf)
    if duration > horizon:
        raise ConfigError(f"sim.duration {duration} exceeds the trajectory "
                          f"horizon {horizon}")

    cfg = SimConfig(
        params=tractor, gains=gains, pmap=pmap, brake=brake,
        trajectory=trajectory, duration=duration, trailers=trailers,
        force_provider=force_provider, replay=replay, sensor=sensor,
        initial_state=initial_state,
        initial_hitch_angles=tuple(float(g) for g in hitch_angles),
        dt_physics=dt_physics, dt_control=dt_control, seed=seed,
        actuation=actuation, psi_rate_source=psi_rate_source,
        compensate_hitch=compensate, log_decimation=log_decimation,
        on_controller_error=on_error, v2_step_tolerance=v2_tol, name=name,
    )
    cfg.validate()
    return Scenario(cfg, audit_max_violations, audit_exclude_saturated,
                    output_log, output_summary)
