import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from mse.fields import discrete_norm, make_grid, sample_coefficients, time_plateau
from mse.go import (GOProbe, ResolutionError, apply_operator, build_phase, build_W,
                    conjugated_residual, max_rho, orthonormal_frame, residual_audit,
                    transport_operator)

QBUMP = "30*exp(-((x-0.5)^2+(y-0.45)^2)/0.02)"


def grid(m=33, nt=64, T=1.0):
    return make_grid(2, (1, 1), T, (m, m), nt)


def test_free_phase_is_annihilated():
    # L e^{i Phi} computed by finite differences; error is pure truncation
    errs = []
    for m, nt in ((33, 256), (65, 1024)):
        g = grid(m, nt, 0.1)
        u = build_phase(g, 4.0, [0.6, 0.8])
        R = apply_operator(u, sample_coefficients(g))
        R[:2] = R[-2:] = 0                    # one-sided time stencils at the ends
        errs.append(discrete_norm(R, g))
    assert errs[1] < errs[0] / 3.5
    # the conjugated form is exact
    g = grid()
    R = conjugated_residual([np.ones((g.nt + 1,) + g.shape, complex)], 9.0, [0.6, 0.8],
                            sample_coefficients(g))
    assert np.max(np.abs(R)) == 0.0


def test_rho_zero_is_constant():
    g = grid()
    assert np.all(build_phase(g, 0.0, [1.0, 0.0]) == 1.0)


def test_resolution_guard_names_max_rho():
    g = grid()
    rmax = max_rho(g, [1.0, 0.0])
    build_phase(g, rmax, [1.0, 0.0])
    with pytest.raises(ResolutionError, match=f"{rmax:.4g}"):
        build_phase(g, 1.01 * rmax, [1.0, 0.0])


def test_time_dependent_c_needs_the_W_factor():
    g = grid(33, 128)
    co = sample_coefficients(g, c="1+t/2")
    with_w = GOProbe(g, 8.0, [1.0, 0.0], coeffs=co, guard=False)
    without = GOProbe(g, 8.0, [1.0, 0.0], coeffs=None, guard=False)
    without._cf = with_w._cf
    rhos = [8, 16, 32, 64]
    win = (0.3, 0.7)                          # away from the cutoff ramps
    s1 = residual_audit(with_w, co, rhos, N=0, window=win)["slope"]
    s0 = residual_audit(without, co, rhos, N=0, window=win)["slope"]
    assert abs(s1) < 0.3 and s0 > 0.7


def test_W_trivial_cases():
    g = grid()
    assert np.all(build_W(g, [1.0, 0.0], sample_coefficients(g)) == 1.0)
    co = sample_coefficients(g, stream="0.1*exp(-((x-0.5)^2+(y-0.5)^2)/0.01)", support_margin=0.3)
    W = build_W(g, [1.0, 0.0], co)
    assert np.allclose(np.abs(W), 1.0, atol=1e-14)
    X, _ = g.mesh()
    # downstream of the support the ray integral is empty up to spline ringing
    assert np.max(np.abs(W[:, X >= 0.7] - 1.0)) < 1e-7


def test_W_solves_its_transport_equation():
    errs = []
    for m, nt in ((33, 64), (65, 128)):
        g = grid(m, nt)
        co = sample_coefficients(g, c="1+t/2", stream="0.1*exp(-((x-0.5)^2+(y-0.5)^2)/0.02)")
        omega = np.array([0.6, 0.8])
        W = build_W(g, omega, co)
        R = transport_operator(W, omega, co)
        dW = sum(omega[a] * np.gradient(W, g.dx[a], axis=1 + a) for a in range(2))
        errs.append(discrete_norm(R, g) / discrete_norm(dW, g))
    assert errs[1] < errs[0] / 3.0


def test_nonlocal_V0_trivial_case():
    g = grid()
    p = GOProbe(g, 5.0, [1.0, 0.0])
    P = g.points()
    V = p.V0(g.t, P)
    assert np.allclose(V, time_plateau(g.t, g.T, p.h)[:, None])
    off = (g.t < p.h) | (g.t > g.T - p.h)
    assert not np.any(V[off])


@given(st.floats(0, 2 * math.pi), st.floats(-0.3, 0.3))
def test_theta_is_constant_along_omega(angle, s):
    g = grid(33, 16)
    omega = np.array([math.cos(angle), math.sin(angle)])
    eta = orthonormal_frame(omega)[1]
    co = sample_coefficients(g, stream="0.1*exp(-((x-0.5)^2+(y-0.5)^2)/0.02)")
    p = GOProbe(g, 1.0, omega, theta=co.A, theta_mode="gradient", xi=3 * eta, tau=2.0, eta=eta)
    P = np.array([[0.5, 0.5], [0.4, 0.6], [0.55, 0.45]])
    a = p.theta_values([0.3], P)
    b = p.theta_values([0.3], P + s * omega)
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(a))


def test_V0_oscillates_with_declared_wavenumbers():
    g = grid(33, 64)
    p = GOProbe(g, 1.0, [1.0, 0.0], tau=2 * math.pi, xi=[0.0, 2 * math.pi * 3], theta_mode="plain")
    V = p.V0(g.t, g.points()).reshape((g.nt + 1,) + g.shape)
    assert np.argmax(np.abs(np.fft.fft(V[32, 10, :-1]))) == 32 - 3
    plateau = (g.t >= 2 * p.h) & (g.t <= g.T - 2 * p.h)
    tt = V[plateau, 10, 10]
    assert np.allclose(tt[1:] / tt[:-1], np.exp(-2j * math.pi * g.dt))


def test_localized_V0_value_and_support():
    g = grid(65, 64)
    x0 = np.array([0.5, 0.5])
    p = GOProbe(g, 5.0, [0.6, 0.8], kind="local", x0=x0, delta=0.1)
    v = p.V0([p.t0], x0[None])
    assert v[0, 0] == pytest.approx(1.0)
    P = g.points()
    d = np.abs((P - x0) @ np.array([-0.8, 0.6]))
    V = p.V0(g.t, P)
    assert not np.any(V[:, d >= 0.1])


def test_transversal_localized_probes_meet_in_a_ball():
    g = grid(65, 64)
    x0 = np.array([0.5, 0.5])
    a = GOProbe(g, 5.0, [1.0, 0.0], kind="local", x0=x0, delta=0.1)
    b = GOProbe(g, 5.0, [0.0, 1.0], kind="local", x0=x0, delta=0.1)
    P = g.points()
    prod = a.V0([0.5], P) * b.V0([0.5], P)
    r = np.linalg.norm(P - x0, axis=1)
    assert not np.any(prod[0, r > 0.1 * math.sqrt(2) + 1e-12])
    assert np.any(prod[0])


def test_localized_mass_scales_with_tube_width():
    g = grid(129, 16)
    x0 = np.array([0.5, 0.5])
    ds = np.array([0.04, 0.08, 0.16])
    m = [discrete_norm(GOProbe(g, 2.0, [1.0, 0.0], kind="local", x0=x0, delta=d).V0(
        [0.5], g.points()).reshape(g.shape), g) for d in ds]
    assert np.polyfit(np.log(ds), np.log(m), 1)[0] == pytest.approx(0.5, abs=0.1)


def test_transport_correction_free_case_vanishes_on_plateau():
    g = grid()
    free = sample_coefficients(g)
    p = GOProbe(g, 5.0, [1.0, 0.0], coeffs=free, N=1)
    V0, V1 = p.amplitudes()
    # one extra step keeps the centered time derivative off the ramps
    plateau = (g.t >= 2 * p.h + g.dt) & (g.t <= g.T - 2 * p.h - g.dt)
    assert np.max(np.abs(V1[plateau])) < 1e-12


def test_transport_correction_against_dense_quadrature():
    g = grid(65, 64)
    co = sample_coefficients(g, q=QBUMP, mask=False)
    p = GOProbe(g, 5.0, [1.0, 0.0], coeffs=co, N=1)
    V1 = p.amplitudes()[1]
    k = 32                                    # t = 0.5, on the plateau
    qf = lambda x, y: 30 * math.exp(-((x - 0.5) ** 2 + (y - 0.45) ** 2) / 0.02)
    for ix, iy in ((40, 30), (32, 32), (50, 20), (20, 40), (60, 29)):
        x, y = ix * g.dx[0], iy * g.dx[1]
        ref = 0.5j * quad(qf, 0, x, args=(y,))[0]
        assert V1[k, ix, iy] == pytest.approx(ref, rel=2e-3, abs=1e-6)
    off = (g.t < p.h) | (g.t > g.T - p.h)
    assert not np.any(V1[off])


def test_free_residual_lives_on_cutoff_ramps():
    g = grid()
    free = sample_coefficients(g)
    p = GOProbe(g, 5.0, [1.0, 0.0], coeffs=free)
    R = conjugated_residual(p.amplitudes(), 12.0, p.omega, free)
    h = p.h
    d = g.dt                                  # stencil reach of the time derivative
    active = ((g.t > h - d) & (g.t < 2 * h + d)) | ((g.t > g.T - 2 * h - d) & (g.t < g.T - h + d))
    assert np.max(np.abs(R[~active])) < 1e-9 * np.max(np.abs(R))


def test_residual_audit_free_case():
    g = grid()
    free = sample_coefficients(g)
    p = GOProbe(g, 8.0, [1.0, 0.0], coeffs=free, guard=False)
    r = residual_audit(p, free, [8, 64], window=(0.3, 0.7))
    assert max(r["residual"]) < 1e-12


@pytest.mark.parametrize("N", [0, 1, 2])
def test_residual_audit_slopes_small_grid(N):
    g = grid(33, 64)
    co = sample_coefficients(g, q=QBUMP)
    p = GOProbe(g, 8.0, [1.0, 0.0], coeffs=co, N=N, guard=False)
    r = residual_audit(p, co, [8, 16, 32, 64])
    assert r["slope"] == pytest.approx(-N, abs=0.3)


@given(st.floats(0, 2 * math.pi), st.floats(1.0, 3.0))
def test_phase_cancellation(angle, rho):
    g = grid(33, 64, 0.25)
    w1 = np.array([math.cos(angle), math.sin(angle)])
    w2 = np.array([-w1[1], w1[0]]) * 0.7
    e = [build_phase(g, rho, w, guard=False) for w in (w1, w2, w1 + w2)]
    assert np.max(np.abs(e[0] * e[1] * np.conj(e[2]) - 1)) < 1e-10


def test_traces_vanish_at_the_correct_end():
    g = grid()
    f = GOProbe(g, 5.0, [1.0, 0.0]).trace()
    b = GOProbe(g, 5.0, [1.0, 0.0], direction="backward").trace()
    loc = GOProbe(g, 5.0, [1.0, 0.0], kind="local", x0=[0.5, 0.5], delta=0.1).trace()
    assert not np.any(f.values[0]) and f.vanish_order("start") > 0
    assert not np.any(b.values[-1]) and b.vanish_order("end") > 0
    assert loc.vanish_order("start") > 0 and loc.vanish_order("end") > 0


def test_probe_validation():
    g = grid()
    with pytest.raises(ValueError):
        GOProbe(g, 5.0, [1.0, 1.0])
    with pytest.raises(ValueError):
        GOProbe(g, 5.0, [1.0, 0.0], xi=[1.0, 0.0])
    with pytest.raises(ValueError):
        GOProbe(g, 5.0, [1.0, 0.0], kind="local", x0=[0.2, 0.5], delta=0.1)
