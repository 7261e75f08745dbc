import numpy as np
import pytest
from hypothesis import given, strategies as st

from mse.fields import (BoundaryTrace, discrete_norm, make_grid, sample_coefficients, slice_norms,
                        time_bump, trace_of, zero_trace)
from mse.go import build_phase
from mse.solver import (IncompatibleTraceError, MagneticOperator, NonConvergenceError,
                        SolveRequest, conservation_audit, dn_extract, dn_map, flux_record,
                        record_slots, relative_drift, solve, solve_linear, solve_nonlinear)

T = 0.5
PSI = "0.1*exp(-((x-0.5)^2+(y-0.5)^2)/0.02)"
Q = "3*exp(-((x-0.5)^2+(y-0.45)^2)/0.02)"


def grid(m=33, nt=64):
    return make_grid(2, (1, 1), T, (m, m), nt)


def envelope(g):
    return np.sin(np.pi * g.t / g.T)[:, None, None] ** 2


def smooth_trace(g, kx=5.0, ky=-3.0, env=None):
    X, Y = g.mesh()
    env = envelope(g) if env is None else env
    return trace_of(env * np.exp(1j * (kx * X + ky * Y)), g)


def rel(a, b, g):
    return discrete_norm(a - b, g) / discrete_norm(b, g)


def test_zero_data_gives_zero_field():
    g = grid()
    u = solve(sample_coefficients(g, q=Q), zero_trace(g))
    assert not np.any(u)


def test_plane_wave_discrete_dispersion_is_exact():
    g = grid()
    co = sample_coefficients(g)
    u_ex = build_phase(g, 6.0, [0.6, 0.8], dispersion="discrete")
    assert discrete_norm(u_ex, g) == pytest.approx(np.sqrt(0.5), rel=1e-12)
    # u = w + u_ex(0): w starts from rest and is driven by F = -H u_ex(0)
    op = MagneticOperator(co)
    F = np.zeros(g.size, complex)
    F[op.inodes] = -op.apply_full(u_ex[0].ravel(), 0)
    F = np.broadcast_to(F.reshape(g.shape), u_ex.shape)
    w = solve(co, trace_of(u_ex - u_ex[0], g), F)
    assert rel(w + u_ex[0], u_ex, g) < 1e-10


def test_plane_wave_continuum_error_is_second_order():
    errs = []
    for m, nt in ((33, 64), (65, 256)):
        g = make_grid(2, (1, 1), 0.25, (m, m), nt)
        X, Y = g.mesh()
        rho, w = 4.0, np.array([0.6, 0.8])
        u_ex = np.exp(1j * rho * (w[0] * X + w[1] * Y))[None] * np.exp(-1j * rho ** 2 * g.t)[:, None, None]
        env = time_bump(g.t, 0.125, 0.125)[:, None, None]
        # multiply by a time envelope so the trace is compatible; absorb it as a source
        v = env * u_ex
        denv = np.gradient(env, g.t, axis=0)
        F = 1j * denv * u_ex
        u = solve(sample_coefficients(g), trace_of(v, g), F)
        errs.append(rel(u, v, g))
    assert errs[1] < errs[0] / 3.0


def test_manufactured_solution_order():
    import sympy as s
    t, x, y = s.symbols("t x y", real=True)
    A1, A2 = s.sin(s.pi * y) * x / 2, s.cos(x) / 3
    q = s.cos(x + y) + t
    v = s.sin(2 * t) * s.exp(s.I * (x + 2 * y)) * (1 + x * y)
    DA = lambda u: (s.diff(u, x, 2) + s.diff(u, y, 2) + 2 * s.I * (A1 * s.diff(u, x) + A2 * s.diff(u, y))
                    + s.I * (s.diff(A1, x) + s.diff(A2, y)) * u - (A1 ** 2 + A2 ** 2) * u)
    F = s.I * s.diff(v, t) + (1 + t / 2) * DA(v) + q * v
    Ff, vf = s.lambdify((t, x, y), F, "numpy"), s.lambdify((t, x, y), v, "numpy")
    a1 = s.lambdify((t, x, y), A1, "numpy")
    errs = []
    for m in (17, 33, 65):
        g = make_grid(2, (1, 1), 1.0, (m, m), m - 1)
        co = sample_coefficients(g, c=lambda tt, *X: 1 + tt / 2,
                                 A=[a1, lambda tt, X, Y: np.cos(X) / 3 + 0 * Y],
                                 q=lambda tt, X, Y: np.cos(X + Y) + tt, mask=False)
        X, Y = g.mesh()
        tt = g.t[:, None, None]
        vs = vf(tt, X, Y)
        u = solve(co, trace_of(vs, g), Ff(tt, X, Y))
        errs.append(rel(u, vs, g))
    slopes = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(slopes - 2.0) < 0.2)


@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_linearity(a, b):
    g = grid(17, 16)
    co = sample_coefficients(g, stream=PSI, q=Q)
    f1, f2 = smooth_trace(g), smooth_trace(g, 2.0, 7.0)
    u = solve(co, f1 * a + f2 * b)
    ref = a * solve(co, f1) + b * solve(co, f2)
    scale = max(discrete_norm(ref, g), 1e-300)
    assert discrete_norm(u - ref, g) <= 1e-10 * scale + 1e-14


def test_backward_solve_is_conjugated_time_reversal():
    g = grid()
    co = sample_coefficients(g, stream=PSI, q=Q)
    gtr = smooth_trace(g)
    z = solve(co, gtr, direction="backward")
    rev = co.replace(A=-co.A)
    w = solve(rev, BoundaryTrace(np.conj(gtr.values[::-1]), g))
    assert rel(np.conj(w[::-1]), z, g) < 1e-11


def test_incompatible_traces_rejected():
    g = grid()
    bad = trace_of(np.ones((g.nt + 1,) + g.shape), g)
    co = sample_coefficients(g)
    with pytest.raises(IncompatibleTraceError):
        solve(co, bad)
    with pytest.raises(IncompatibleTraceError):
        solve(co, bad, direction="backward")
    with pytest.raises(ValueError):
        solve_linear(SolveRequest(co, smooth_trace(g), nonlinear=True))


def test_nonlinear_with_zero_B_matches_linear():
    g = grid()
    co = sample_coefficients(g, q=Q)
    f = smooth_trace(g)
    u = solve_nonlinear(SolveRequest(co, f, nonlinear=True))
    assert rel(u, solve(co, f), g) < 1e-12


def test_first_linearization_scaling():
    g = grid()
    co = sample_coefficients(g, B={"2,0": 5.0})
    f = smooth_trace(g)
    v = solve(co, f)
    errs = [rel(solve(co, f * e, nonlinear=True) / e, v, g) for e in (1e-2, 5e-3)]
    # the leading correction is quadratic in the data, so the error is linear in eps
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_gross_pitaevskii_converges_quickly():
    g = make_grid(2, (1, 1), T, (65, 65), 128)
    co = sample_coefficients(g, B={"2,1": 1.0})
    info = {}
    u = solve_nonlinear(SolveRequest(co, smooth_trace(g) * 0.1, nonlinear=True, info=info))
    assert np.all(np.isfinite(u))
    assert max(info["iterations"]) <= 10


def test_large_data_reports_nonconvergence():
    g = grid(17, 16)
    co = sample_coefficients(g, B={"2,1": 1.0})
    with pytest.raises(NonConvergenceError):
        solve(co, smooth_trace(g) * 1e3, nonlinear=True, max_iter=20)


def _face(rec, axis, side):
    g = rec.grid
    _, _, _, _, ax, sd = record_slots(g, rec.mode)
    return (ax == axis) & (sd == side)


def test_dn_extract_plane_wave_face():
    errs = []
    for m in (33, 65):
        g = make_grid(2, (1, 1), T, (m, m), 16)
        X, Y = g.mesh()
        rho, w = 4.0, np.array([0.6, 0.8])
        u = np.exp(1j * rho * (w[0] * X + w[1] * Y))[None] * np.ones((g.nt + 1, 1, 1))
        rec = dn_extract(u, sample_coefficients(g))
        sel = _face(rec, 0, 1)
        exact = 1j * rho * w[0] * u.reshape(g.nt + 1, -1)[:, rec.nodes[sel]]
        errs.append(np.max(np.abs(rec.values[:, sel] - exact)))
    assert errs[1] < errs[0] / 3.5


def test_dn_of_zero_field_is_zero():
    g = grid()
    rec = dn_extract(np.zeros((g.nt + 1,) + g.shape), sample_coefficients(g))
    assert rec.norm() == 0.0


def test_flux_and_order2_records_agree_on_smooth_solutions():
    g = make_grid(2, (1, 1), T, (65, 65), 128)
    co = sample_coefficients(g, q=Q)
    f = smooth_trace(g, 3.0, 1.0)
    a = dn_map(co, f, mode="order2")
    b = dn_map(co, f, mode="flux")
    # compare the time-integrated response on the x = 1 face
    sa = a.tweights @ a.values[:, _face(a, 0, 1)]
    sb = b.tweights @ b.values[:, _face(b, 0, 1)]
    assert np.linalg.norm(sa[1:-1] - sb) / np.linalg.norm(sa) < 0.05


def test_green_identity_is_exact_for_flux_records():
    g = grid()
    c1 = sample_coefficients(g, q="20*exp(-((x-0.5)^2+(y-0.4)^2)/0.02)", stream=PSI)
    c2 = sample_coefficients(g, q="5*exp(-((x-0.4)^2+(y-0.5)^2)/0.02)")
    f, h = smooth_trace(g), smooth_trace(g, -2.0, 6.0)
    lhs = (flux_record(c1, f) - flux_record(c2, f)).pair(h)
    rhs = np.conj((flux_record(c1, h, direction="backward") - flux_record(c2, h, direction="backward")).pair(f))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_conservation_after_forcing():
    g = grid(33, 128)
    co = sample_coefficients(g, stream=PSI, q=Q)
    X, Y = g.mesh()
    f = trace_of(time_bump(g.t, 0.1, 0.1)[:, None, None] * np.exp(1j * (3 * X - 2 * Y)), g)
    s = conservation_audit(solve(co, f), g)
    k = np.searchsorted(g.t, 0.2) + 1
    assert s[k] > 1e-3 and relative_drift(s, k) <= 1e-10


def test_conservation_of_zero_forcing():
    g = grid()
    s = conservation_audit(solve(sample_coefficients(g), zero_trace(g)), g)
    assert not np.any(s)


def test_complex_q_is_detected():
    g = grid(33, 128)
    co = sample_coefficients(g, q=Q)
    co = co.replace(q=co.q + 2j * np.exp(-((g.mesh()[0] - 0.5) ** 2) / 0.02))
    X, Y = g.mesh()
    f = trace_of(time_bump(g.t, 0.1, 0.1)[:, None, None] * np.exp(1j * (3 * X - 2 * Y)), g)
    s = slice_norms(solve(co, f), g)
    assert relative_drift(s, np.searchsorted(g.t, 0.2) + 1) > 1e-3


def test_gauge_covariance_small_grid():
    g = make_grid(2, (1, 1), T, (33, 33), 64)
    X, Y = g.mesh()
    tt = g.t[:, None, None]
    bump = np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.01)
    s = np.sin(np.pi * tt / T) ** 2
    ds = np.pi / T * np.sin(2 * np.pi * tt / T)
    c1 = sample_coefficients(g, stream=PSI, q=Q)
    grad = np.stack([s * bump * (-2 * (X - 0.5) / 0.01), s * bump * (-2 * (Y - 0.5) / 0.01)], 1)
    c2 = c1.replace(A=c1.A + grad, q=c1.q - ds * bump)
    f = smooth_trace(g)
    r1, r2 = flux_record(c1, f), flux_record(c2, f)
    assert (r1 - r2).norm() / r1.norm() < 1e-3


def test_stability_bound_is_grid_independent():
    ratios = []
    for m, nt in ((17, 32), (33, 64), (65, 128)):
        g = grid(m, nt)
        X, Y = g.mesh()
        F = envelope(g) * np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.02)
        u = solve(sample_coefficients(g, q=Q), zero_trace(g), F)
        ratios.append(discrete_norm(u, g) / discrete_norm(F, g))
    assert max(ratios) / min(ratios) < 1.2
