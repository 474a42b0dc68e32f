import math

import mpmath
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from towsim import (BackstepState, ControllerGains, HitchForce,
                    InvalidReferenceError, PropulsionMap, BrakeParams,
                    ReferenceSample, TrackingController, TrackingError,
                    TractorParams, TractorState, compute_coefficients,
                    error_rates, error_transform, invert_map,
                    inverse_error_transform, omega1_dot, sinc_like,
                    steering_law, virtual_control)
from towsim.controller import THETA_SWITCH


def ref(x=0.0, y=0.0, th=0.0, v=1.0, th_dot=0.0, v_dot=0.0, th_ddot=0.0,
        v_ddot=0.0):
    return ReferenceSample(x, y, th, v, th_dot, v_dot, th_ddot, v_ddot)


def test_error_transform_identity():
    r = ref(x=3.0, y=-1.0, th=0.7, v=1.2)
    s = TractorState(3.0, -1.0, 0.7, 1.2, 0.0)
    e = error_transform(s, r)
    assert (e.x_e, e.y_e, e.theta_e, e.v_e) == (0.0, 0.0, 0.0, 0.0)


def test_error_transform_quarter_turn():
    r = ref(x=0.0, y=0.0, th=math.pi / 2)
    s = TractorState(1.0, 2.0, 0.0, 1.0, 0.0)
    e = error_transform(s, r)
    assert e.x_e == pytest.approx(2.0, rel=1e-12)
    assert e.y_e == pytest.approx(-1.0, rel=1e-12)


@given(phi=st.floats(-3, 3), x=st.floats(-5, 5), y=st.floats(-5, 5),
       xd=st.floats(-5, 5), yd=st.floats(-5, 5), thd=st.floats(-3, 3),
       th=st.floats(-3, 3))
def test_error_transform_rotation_invariance(phi, x, y, xd, yd, thd, th):
    # rotating state and reference together about the origin leaves the
    # in-frame position errors unchanged
    c, s = math.cos(phi), math.sin(phi)
    r1 = ref(x=xd, y=yd, th=thd)
    e1 = error_transform(TractorState(x, y, th, 1.0, 0.0), r1)
    r2 = ref(x=c * xd - s * yd, y=s * xd + c * yd, th=thd + phi)
    e2 = error_transform(
        TractorState(c * x - s * y, s * x + c * y, th + phi, 1.0, 0.0), r2)
    assert e2.x_e == pytest.approx(e1.x_e, rel=1e-9, abs=1e-9)
    assert e2.y_e == pytest.approx(e1.y_e, rel=1e-9, abs=1e-9)


@given(xe=st.floats(-5, 5), ye=st.floats(-5, 5), te=st.floats(-3, 3),
       ve=st.floats(-2, 2), thd=st.floats(-3, 3))
def test_error_transform_round_trip(xe, ye, te, ve, thd):
    r = ref(x=2.0, y=-3.0, th=thd, v=1.0)
    err = TrackingError(xe, ye, te, ve)
    s = inverse_error_transform(err, r, psi=0.1)
    back = error_transform(s, r)
    assert back.x_e == pytest.approx(xe, abs=1e-12)
    assert back.y_e == pytest.approx(ye, abs=1e-12)
    assert back.theta_e == pytest.approx(te, abs=1e-12)
    assert back.v_e == pytest.approx(ve, abs=1e-12)


def test_sinc_limits_at_zero():
    s1, s2, ds1, ds2 = sinc_like(0.0)
    assert (s1, s2, ds1, ds2) == (1.0, 0.0, 0.0, 0.5)


def test_sinc_at_one():
    s1, s2, _, _ = sinc_like(1.0)
    assert s1 == pytest.approx(math.sin(1.0), rel=1e-15)
    assert s2 == pytest.approx(1.0 - math.cos(1.0), rel=1e-15)


def test_sinc_branch_agreement():
    for th in (THETA_SWITCH, -THETA_SWITCH):
        inside = sinc_like(math.nextafter(th, 0.0))
        outside = sinc_like(math.nextafter(th, 2 * th))
        for a, b in zip(inside, outside):
            assert a == pytest.approx(b, abs=1e-12)


def test_sinc_against_mpmath():
    # the derivative terms lose ~2 digits to cancellation just outside the
    # series branch, hence the 1e-11 relative bound there
    mpmath.mp.dps = 40
    for th in (1e-9, -1e-9, 1e-6, -1e-6, 5e-3, 9e-3, 1.1e-2, 0.5, -2.5):
        t = mpmath.mpf(th)
        want = (mpmath.sin(t) / t,
                (1 - mpmath.cos(t)) / t,
                (t * mpmath.cos(t) - mpmath.sin(t)) / t ** 2,
                (mpmath.sin(t) - (1 - mpmath.cos(t)) / t) / t)
        got = sinc_like(th)
        for g, w in zip(got, want):
            assert g == pytest.approx(float(w), rel=1e-11, abs=1e-14)


@given(th=st.floats(-3, 3))
def test_sinc_parity(th):
    s1p, s2p, _, _ = sinc_like(th)
    s1n, s2n, _, _ = sinc_like(-th)
    assert s1n == pytest.approx(s1p, rel=1e-12, abs=1e-15)   # even
    assert s2n == pytest.approx(-s2p, rel=1e-12, abs=1e-15)  # odd


def test_virtual_control_pure_feedforward(params, gains):
    err = TrackingError(0.0, 0.0, 0.0, 0.0)
    coeffs = compute_coefficients(params, 0.0, 0.0, 1.0)
    vc = virtual_control(err, ref(v=1.0), HitchForce(639.6, 0.0), coeffs, gains)
    assert vc.omega1 == 0.0
    assert vc.omega2 == pytest.approx(639.6, rel=1e-12)


def test_virtual_control_lateral_limit(params, gains):
    err = TrackingError(0.0, 0.5, 0.0, 0.0)
    coeffs = compute_coefficients(params, 0.0, 0.0, 1.0)
    vc = virtual_control(err, ref(v=1.0), HitchForce(), coeffs, gains)
    assert vc.omega1 == pytest.approx(-0.5, rel=1e-12)


def test_virtual_control_generic_against_direct_formula(params):
    # independent straight-line evaluation of the two laws, singular form
    gains = ControllerGains(k_theta=1.0, k_v=2.0, k_psi=5.0)
    xe, ye, te, ve = 0.2, -0.1, 0.15, 0.05
    v_d, th_dot_d, v_dot_d = 1.0, 0.1, 0.0
    hx, hy = 700.0, -120.0
    psi, psi_dot, v_x = 0.18, 0.02, v_d + ve
    coeffs = compute_coefficients(params, psi, psi_dot, v_x)

    w1 = (1.0 / te) * (xe * (1 - math.cos(te)) - ye * math.sin(te)) \
        - gains.k_theta * te + th_dot_d / v_d
    w2 = hx + (1.0 / coeffs.phi2) * (
        coeffs.phi3 * hy - coeffs.phi1 + v_dot_d - gains.k_v * ve - xe
        + gains.k_theta * te ** 2 - (th_dot_d / v_d) * te)

    err = TrackingError(xe, ye, te, ve)
    vc = virtual_control(err, ref(v=v_d, th_dot=th_dot_d), HitchForce(hx, hy),
                         coeffs, gains)
    assert vc.omega1 == pytest.approx(w1, rel=1e-12)
    assert vc.omega2 == pytest.approx(w2, rel=1e-12)


def test_virtual_control_invalid_reference(params, gains):
    coeffs = compute_coefficients(params, 0.0, 0.0, 1.0)
    with pytest.raises(InvalidReferenceError):
        virtual_control(TrackingError(0, 0, 0, 0), ref(v=0.0), HitchForce(),
                        coeffs, gains)


def test_omega1_dot_zero_at_circle_equilibrium(gains):
    # constant-curvature constant-speed reference, zero error, matched psi
    r = ref(v=1.0, th_dot=0.1)
    err = TrackingError(0.0, 0.0, 0.0, 0.0)
    rates = error_rates(err, r, v_x=1.0, c_psi=0.1)
    assert rates == (0.0, 0.0, 0.0)
    assert omega1_dot(err, r, gains, rates) == pytest.approx(0.0, abs=1e-15)


def _sympy_omega1_dot():
    t = sp.symbols("t")
    xe, ye, te = sp.Function("xe")(t), sp.Function("ye")(t), sp.Function("te")(t)
    thd, vd = sp.Function("thd")(t), sp.Function("vd")(t)
    k_theta = sp.symbols("k_theta", positive=True)
    omega1 = (xe * (1 - sp.cos(te)) / te - ye * sp.sin(te) / te
              - k_theta * te + thd / vd)
    return t, xe, ye, te, thd, vd, k_theta, sp.diff(omega1, t)


def test_omega1_dot_symbolic_oracle(gains):
    t, xe, ye, te, thd, vd, k_theta, d_sym = _sympy_omega1_dot()
    cases = [
        # xe, ye, te, ve, vx, c_psi, v_d, th_dot, v_dot, th_ddot, v_ddot
        (0.2, -0.1, 0.15, 0.05, 1.05, 0.12, 1.0, 0.1, 0.0, 0.0, 0.0),
        (-1.3, 0.7, -0.9, -0.2, 0.8, -0.3, 1.2, -0.2, 0.1, 0.05, -0.02),
        (0.5, 0.5, 0.021, 0.1, 1.1, 0.0, 0.9, 0.3, -0.1, 0.2, 0.3),
    ]
    for (xe_v, ye_v, te_v, ve_v, vx, c_psi, v_d, th_dot, v_dot, th_ddot,
         v_ddot) in cases:
        r = ref(v=v_d, th_dot=th_dot, v_dot=v_dot, th_ddot=th_ddot,
                v_ddot=v_ddot)
        err = TrackingError(xe_v, ye_v, te_v, ve_v)
        rates = error_rates(err, r, vx, c_psi)
        got = omega1_dot(err, r, gains, rates)

        subs = {
            xe: xe_v, ye: ye_v, te: te_v, thd: th_dot, vd: v_d,
            k_theta: gains.k_theta,
            sp.diff(xe, t): rates[0], sp.diff(ye, t): rates[1],
            sp.diff(te, t): rates[2],
            sp.diff(thd, t): th_ddot, sp.diff(vd, t): v_dot,
        }
        want = float(d_sym.subs(subs))
        assert got == pytest.approx(want, rel=1e-10)


def test_omega1_dot_straight_special_case(gains):
    # straight reference, on the path, heading aligned: only the lateral
    # rate and the heading-error rate remain
    r = ref(v=1.0)
    err = TrackingError(0.0, 0.0, 0.0, 0.0)
    c_psi = 0.2
    rates = error_rates(err, r, v_x=1.0, c_psi=c_psi)
    te_dot = 1.0 * c_psi
    want = -rates[1] * 1.0 - gains.k_theta * te_dot
    assert omega1_dot(err, r, gains, rates) == pytest.approx(want, rel=1e-12)


def test_steering_law_examples(params, gains):
    s = TractorState(0, 0, 0, 1.0, 0.12)
    u2, sat = steering_law(BackstepState(c_psi=math.tan(0.12) / 2.0,
                                         delta_psi=0.0),
                           0.0, TrackingError(0, 0, 0, 0), s, params, gains)
    assert u2 == pytest.approx(0.12, rel=1e-12)
    assert not sat

    p = TractorParams(tau=0.2)
    s = TractorState(0, 0, 0, 1.0, 0.0)
    g = ControllerGains(k_theta=1.0, k_v=2.0, k_psi=5.0)
    u2, sat = steering_law(BackstepState(0.0, 0.05), 0.0,
                           TrackingError(0, 0, 0.1, 0), s, p, g)
    assert u2 == pytest.approx(-0.14, rel=1e-12)
    assert not sat


def test_steering_law_monotone_in_gain(params):
    s = TractorState(0, 0, 0, 1.0, 0.0)
    e = TrackingError(0, 0, 0.1, 0)
    bs = BackstepState(0.0, 0.05)
    g1 = ControllerGains(1.0, 2.0, 5.0)
    g2 = ControllerGains(1.0, 2.0, 10.0)
    u_a, _ = steering_law(bs, 0.0, e, s, params, g1)
    u_b, _ = steering_law(bs, 0.0, e, s, params, g2)
    assert u_b < u_a


def test_steering_law_saturates(params, gains):
    s = TractorState(0, 0, 0, 1.0, 0.0)
    u2, sat = steering_law(BackstepState(0.0, -10.0), 0.0,
                           TrackingError(0, 0, 0, 0), s, params, gains)
    assert u2 == params.psi_max
    assert sat


def test_control_step_perfect_tracking(params, gains, pmap, brake):
    ctrl = TrackingController(params, gains, pmap, brake)
    r = ref(v=1.0)
    state = TractorState(0.0, 0.0, 0.0, 1.0, 0.0)
    out = ctrl.control_step(state, r, HitchForce(639.6, 0.0))
    assert out.error is None
    assert out.mode == "throttle"
    assert out.u1 == pytest.approx(invert_map(pmap, 639.6, 1.0).u1, rel=1e-12)
    assert out.u2 == pytest.approx(0.0, abs=1e-15)
    assert out.v1 == 0.0 and out.v2 == 0.0


def test_control_step_brakes_on_overspeed(params, gains, pmap, brake):
    ctrl = TrackingController(params, gains, pmap, brake)
    r = ref(v=1.0)
    state = inverse_error_transform(TrackingError(0, 0, 0, 0.8), r)
    out = ctrl.control_step(state, r, HitchForce())
    assert out.omega2 < 0
    assert out.mode == "brake"
    assert out.u3 == pytest.approx(out.omega2 / brake.n_b, rel=1e-12)
    assert out.u3 >= 0


def test_control_step_psi_rate_reconstruction(params, gains, pmap, brake):
    ctrl = TrackingController(params, gains, pmap, brake)
    r = ref(v=1.0, th_dot=0.0)
    s1 = TractorState(0.0, 0.2, 0.05, 1.0, 0.02)
    out1 = ctrl.control_step(s1, r, HitchForce())
    s2 = TractorState(0.1, 0.19, 0.05, 1.0, 0.03)
    out2 = ctrl.control_step(s2, r, HitchForce())
    assert out2.psi_dot_est == pytest.approx((out1.u2 - s2.psi) / params.tau,
                                             rel=1e-12)


def test_control_step_true_rate_source(params, gains, pmap, brake):
    ctrl = TrackingController(params, gains, pmap, brake,
                              psi_rate_source="true_rate")
    out = ctrl.control_step(TractorState(0, 0, 0, 1.0, 0.0), ref(v=1.0),
                            HitchForce(), psi_dot_true=0.123)
    assert out.psi_dot_est == 0.123


def test_control_step_deterministic(params, gains, pmap, brake):
    r = ref(v=1.0, th_dot=0.1)
    state = TractorState(0.3, -0.2, 0.1, 1.1, 0.05)
    outs = []
    for _ in range(2):
        ctrl = TrackingController(params, gains, pmap, brake)
        outs.append(ctrl.control_step(state, r, HitchForce(500.0, -50.0)))
    assert outs[0] == outs[1]


def test_control_step_safe_stop_on_bad_reference(params, gains, pmap, brake):
    ctrl = TrackingController(params, gains, pmap, brake)
    state = TractorState(0, 0, 0, 1.0, 0.07)
    out = ctrl.control_step(state, ref(v=0.0), HitchForce())
    assert out.error is not None
    assert out.u1 == 0.0
    assert out.u3 == params.u3_max / 2
    assert out.u2 == state.psi


def test_compensation_ablation(params, gains, pmap, brake):
    r = ref(v=1.0)
    state = TractorState(0, 0, 0, 1.0, 0.0)
    on = TrackingController(params, gains, pmap, brake)
    off = TrackingController(params, gains, pmap, brake, compensate_hitch=False)
    h = HitchForce(2000.0, 0.0)
    assert on.control_step(state, r, h).omega2 == pytest.approx(2000.0)
    assert off.control_step(state, r, h).omega2 == pytest.approx(0.0)


def test_gain_validation():
    with pytest.raises(ValueError):
        ControllerGains(k_theta=0.0)
    with pytest.raises(ValueError):
        ControllerGains(k_v=-1.0)
    with pytest.raises(ValueError):
        ControllerGains(k_psi=0.0)
