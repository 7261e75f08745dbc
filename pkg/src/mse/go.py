"""Geometric-optics probes: linear phases, transported amplitudes, traces.

A probe is e^{i Phi} (V_0 + V_1/rho + ... + V_N/rho^N) with
Phi = rho (x.omega/sqrt(c(t)) - rho |omega|^2 t).  Amplitudes are evaluated
pointwise, so boundary traces never require the full space-time field.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.ndimage import map_coordinates

from .fields import (BoundaryTrace, CoefficientSet, discrete_norm, sample_coefficients,
                     spatial_bump, time_bump, time_plateau)

log = logging.getLogger(__name__)

GUARD = 2 * math.pi / 10


class ResolutionError(ValueError):
    pass


def max_rho(grid, omega):
    """Largest rho passing the resolution guard for direction omega."""
    w = np.linalg.norm(omega)
    if w == 0:
        return math.inf
    return min(GUARD / (w * max(grid.dx)), math.sqrt(GUARD / grid.dt) / w)


def check_resolution(grid, rho, omega):
    if rho > max_rho(grid, omega) * (1 + 1e-12):
        raise ResolutionError(
            f"rho = {rho:g} is not resolved by the grid (max admissible rho = "
            f"{max_rho(grid, omega):.4g} for |omega| = {np.linalg.norm(omega):.4g})")


def orthonormal_frame(omega):
    """Gram-Schmidt on (omega, e_1, ..., e_n); rows are omega/|omega|, alpha_1.."""
    omega = np.asarray(omega, float)
    n = omega.size
    basis = [omega / np.linalg.norm(omega)]
    for j in range(n):
        v = np.eye(n)[j]
        for b in basis:
            v = v - (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == n:
            break
    return np.array(basis)


# ---------------------------------------------------------------------------
# phases

def discrete_wavevector(grid, rho, omega):
    """Wavevector whose discrete group velocity is parallel to omega.

    Chooses k_j with sin(k_j dx_j)/dx_j = rho omega_j, so centered
    differences see exactly rho*omega.
    """
    dx = np.asarray(grid.dx)
    arg = rho * np.asarray(omega, float) * dx
    if np.any(np.abs(arg) >= 1):
        raise ResolutionError(f"rho = {rho:g} too large for discrete dispersion on this grid")
    return np.arcsin(arg) / dx


def discrete_frequency(grid, k, c=1.0):
    """Crank-Nicolson frequency of e^{i k.x} for the free operator c Delta."""
    dx = np.asarray(grid.dx)
    mu = c * np.sum((2 - 2 * np.cos(np.asarray(k) * dx)) / dx ** 2)
    return 2.0 / grid.dt * math.atan(0.5 * mu * grid.dt)


def phase_values(t, P, rho, omega, c=None, discrete=None):
    """e^{i Phi} at times t (nt,) and points P (m, n) -> (nt, m)."""
    t = np.atleast_1d(np.asarray(t, float))
    omega = np.asarray(omega, float)
    if discrete is not None:
        k, lam = discrete
        return np.exp(1j * (np.outer(np.ones_like(t), P @ k) - lam * t[:, None]))
    xw = P @ omega
    if c is None:
        sc = np.ones_like(t)
    else:
        sc = np.sqrt(c(t))
    return np.exp(1j * rho * (xw[None, :] / sc[:, None] - rho * (omega @ omega) * t[:, None]))


def build_phase(grid, rho, omega, c=None, dispersion="continuum", guard=True):
    """Unit-modulus samples of e^{i Phi} on the whole grid, shape (nt+1, *nx).

    c is None (c = 1), a CoefficientSet or a callable of t.  dispersion
    "discrete" uses the wavevector/frequency pair that solves the
    Crank-Nicolson scheme exactly for A = q = 0 and constant c.
    """
    if rho == 0:
        return np.ones((grid.nt + 1,) + grid.shape, complex)
    if guard:
        check_resolution(grid, rho, omega)
    cf = _c_callable(c)
    disc = None
    if dispersion == "discrete":
        disc = _discrete_pair(grid, rho, omega, cf)
    vals = phase_values(grid.t, grid.points(), rho, omega, cf, disc)
    return vals.reshape((grid.nt + 1,) + grid.shape)


def _c_callable(c):
    if c is None:
        return None
    if isinstance(c, CoefficientSet):
        if np.ptp(c.c) == 0 and c.c[0] == 1.0:
            return None
        return c.c_at
    if isinstance(c, (int, float)):
        val = float(c)
        return None if val == 1.0 else (lambda t: np.full_like(np.asarray(t, float), val))
    return c


def _discrete_pair(grid, rho, omega, cf):
    cval = 1.0
    if cf is not None:
        cs = cf(grid.t)
        if np.ptp(cs) > 0:
            raise ValueError("discrete dispersion needs a constant c")
        cval = float(cs[0])
    k = discrete_wavevector(grid, rho / math.sqrt(cval), omega)
    return k, discrete_frequency(grid, k, cval)


# ---------------------------------------------------------------------------
# ray integrals

def interpolate(values, grid, P, order=3):
    """Spline interpolation of a spatial slice at points P (m, n)."""
    coords = (np.asarray(P) / np.asarray(grid.dx)).T
    for a in range(grid.n):
        np.clip(coords[a], 0, grid.nx[a] - 1, out=coords[a])
    if np.iscomplexobj(values):
        return (map_coordinates(values.real, coords, order=order, mode="nearest")
                + 1j * map_coordinates(values.imag, coords, order=order, mode="nearest"))
    return map_coordinates(values, coords, order=order, mode="nearest")


def exit_distance(grid, P, d):
    """Distance s >= 0 along direction d until P + s d leaves the box."""
    P = np.atleast_2d(P)
    s = np.full(P.shape[0], np.inf)
    for a, L in enumerate(grid.box_lengths):
        if d[a] > 0:
            s = np.minimum(s, (L - P[:, a]) / d[a])
        elif d[a] < 0:
            s = np.minimum(s, -P[:, a] / d[a])
    return np.maximum(s, 0.0)


def _even(m):
    m = max(int(math.ceil(m)), 2)
    return m + (m % 2)


def forward_ray_integral(vec_slice, grid, P, omega):
    """int_0^inf vec(x + s omega).omega ds for a vector field slice (n, *nx),
    extended by zero outside the box; composite Simpson with step <= dx/2."""
    omega = np.asarray(omega, float)
    wn = np.linalg.norm(omega)
    S = exit_distance(grid, P, omega)
    M = _even(np.max(S) * wn / (0.5 * min(grid.dx)))
    frac = np.linspace(0.0, 1.0, M + 1)
    out = np.zeros(P.shape[0])
    for chunk in _chunks(P.shape[0], 400000 // (M + 1) + 1):
        s = S[chunk, None] * frac[None, :]
        pts = P[chunk, None, :] + s[..., None] * omega
        g = sum(omega[a] * interpolate(vec_slice[a], grid, pts.reshape(-1, grid.n))
                for a in range(grid.n) if omega[a] != 0)
        g = np.reshape(g, s.shape)
        out[chunk] = simpson(g, x=frac, axis=1) * S[chunk]
    return out


def line_integral(vec_slice, grid, P, omega):
    """int_R vec(x + s omega).omega ds, sampled from the foot of each line so the
    result is exactly invariant under x -> x + s omega."""
    omega = np.asarray(omega, float)
    u = omega / np.linalg.norm(omega)
    center = 0.5 * np.asarray(grid.box_lengths)
    foot = center + (P - center) - np.outer((P - center) @ u, u)
    R = 0.5 * math.sqrt(sum(L * L for L in grid.box_lengths)) + 1e-12
    M = _even(2 * R / (0.5 * min(grid.dx)))
    s = np.linspace(-R, R, M + 1)
    out = np.zeros(P.shape[0])
    for chunk in _chunks(P.shape[0], 400000 // (M + 1) + 1):
        pts = foot[chunk, None, :] + s[None, :, None] * u
        inside = np.all((pts >= 0) & (pts <= np.asarray(grid.box_lengths)), axis=-1)
        g = sum(u[a] * interpolate(vec_slice[a], grid, pts.reshape(-1, grid.n))
                for a in range(grid.n) if u[a] != 0)
        g = np.reshape(g, inside.shape) * inside
        out[chunk] = simpson(g, x=s, axis=1)
    return out * np.linalg.norm(omega)


def _chunks(n, size):
    size = max(int(size), 1)
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def _vector_slices(vec, grid, t):
    """Return list of (n, *nx) slices of a vector field for the times t."""
    if vec is None:
        return None
    vec = np.asarray(vec)
    if vec.shape[0] == 1:
        return [vec[0]] * len(t)
    return [_tinterp(vec, grid, tt) for tt in t]


def _tinterp(arr, grid, tt):
    s = min(max(tt / grid.dt, 0), grid.nt)
    k = min(int(s), grid.nt - 1)
    w = s - k
    return (1 - w) * arr[k] + w * arr[k + 1]


def W_values(coeffs, omega, t, P):
    """W = exp(i c'(x.w)^2/(8c^2)) exp(i int_0^inf A(t, x+s w).w ds); (nt, m)."""
    t = np.atleast_1d(np.asarray(t, float))
    out = np.ones((t.size, P.shape[0]), complex)
    if coeffs is None:
        return out
    grid = coeffs.grid
    if coeffs.has_A:
        if coeffs.A.shape[0] == 1:
            out *= np.exp(1j * forward_ray_integral(coeffs.A[0], grid, P, omega))[None, :]
        else:
            for i, tt in enumerate(t):
                out[i] *= np.exp(1j * forward_ray_integral(coeffs.A_at(tt), grid, P, omega))
    if np.ptp(coeffs.c) > 0 or coeffs.c_func is not None:
        c = coeffs.c_at(t)
        dc = coeffs.dc_at(t)
        xw = P @ np.asarray(omega, float)
        out *= np.exp(1j * np.outer(dc / (8 * c ** 2), xw ** 2))
    return out


def build_W(grid, omega, coeffs):
    """W sampled on the whole grid, shape (nt+1, *nx)."""
    return W_values(coeffs, omega, grid.t, grid.points()).reshape((grid.nt + 1,) + grid.shape)


# ---------------------------------------------------------------------------
# probes

@dataclass(eq=False)
class GOProbe:
    grid: object
    rho: float
    omega: np.ndarray
    kind: str = "nonlocal"            # or "local"
    coeffs: Optional[CoefficientSet] = None   # coefficients used for W and V_k
    N: int = 0
    direction: str = "forward"
    dispersion: str = "continuum"
    # non-localized amplitude
    tau: float = 0.0
    xi: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    theta: Optional[object] = None    # vector field (T?, n, *nx) or None
    theta_mode: str = "constant"      # "constant", "plain" or "gradient"
    theta_const: complex = 1.0
    h: Optional[float] = None
    # localized amplitude
    x0: Optional[np.ndarray] = None
    delta: Optional[float] = None
    t0: Optional[float] = None
    width: Optional[float] = None
    guard: bool = True
    retarded: bool = False            # envelope evaluated at t - travel time
    carrier: Optional[tuple] = None   # explicit discrete (k, lambda), overrides rho*omega
    _amps: list = field(default=None, repr=False)

    def __post_init__(self):
        g = self.grid
        self.omega = np.asarray(self.omega, float)
        if self.omega.shape != (g.n,) or not np.any(self.omega):
            raise ValueError("omega must be a nonzero n-vector")
        if self.guard and self.rho > 0:
            check_resolution(g, self.rho, self.omega)
        if self.kind == "nonlocal":
            if abs(np.linalg.norm(self.omega) - 1) > 1e-12:
                raise ValueError("non-localized probes need |omega| = 1")
            self.xi = np.zeros(g.n) if self.xi is None else np.asarray(self.xi, float)
            if abs(self.xi @ self.omega) > 1e-9 * max(1.0, np.linalg.norm(self.xi)):
                raise ValueError("xi must be orthogonal to omega")
            if self.eta is None:
                self.eta = orthonormal_frame(self.omega)[1] if g.n > 1 else np.zeros(1)
            self.eta = np.asarray(self.eta, float)
            if abs(self.eta @ self.omega) > 1e-9:
                raise ValueError("eta must be orthogonal to omega")
            if self.h is None:
                self.h = g.T / 8
        elif self.kind == "local":
            self.x0 = np.asarray(self.x0, float)
            margin = self.coeffs.support_margin if self.coeffs is not None else 0.15 * min(g.box_lengths)
            dist = min(min(x, L - x) for x, L in zip(self.x0, g.box_lengths))
            if dist - margin <= self.delta:
                raise ValueError(f"x0 = {self.x0} is within delta of the collar")
            if self.t0 is None:
                self.t0 = 0.5 * g.T
            if self.width is None:
                self.width = 0.35 * g.T
        else:
            raise ValueError(f"unknown probe kind {self.kind!r}")
        self._cf = _c_callable(self.coeffs) if self.coeffs is not None else None
        self._disc = None
        if self.carrier is not None:
            k, lam = self.carrier
            self._disc = (np.asarray(k, float), float(lam))
        elif self.dispersion == "discrete" and self.rho > 0:
            self._disc = _discrete_pair(g, self.rho, self.omega, self._cf)

    # -- pointwise evaluation ------------------------------------------------
    def envelope(self, t):
        t = np.asarray(t, float)
        if self.kind == "nonlocal":
            return time_plateau(t, self.grid.T, self.h)
        return time_bump(t, self.t0, self.width)

    def group_velocity(self):
        """Group velocity of the carrier wave (discrete or continuum dispersion)."""
        g = self.grid
        if self._disc is not None:
            k, lam = self._disc
            cval = 1.0 if self._cf is None else float(self._cf(np.zeros(1))[0])
            dx = np.asarray(g.dx)
            mu = cval * np.sum((2 - 2 * np.cos(k * dx)) / dx ** 2)
            return cval * 2 * np.sin(k * dx) / dx / (1 + (0.5 * mu * g.dt) ** 2)
        cval = 1.0 if self._cf is None else float(np.mean(self._cf(g.t)))
        return 2 * math.sqrt(cval) * self.rho * self.omega

    def delay(self, P):
        """Travel time to the points P, from the inflow corner plane (or x0 for local probes)."""
        v = self.group_velocity()
        speed = np.linalg.norm(v)
        e = v / speed
        if self.kind == "local":
            return (P - self.x0) @ e / speed
        corners = np.array(list(itertools.product(*[(0.0, L) for L in self.grid.box_lengths])))
        return (P @ e - np.min(corners @ e)) / speed

    def envelope_at(self, t, P):
        """Envelope on (times, points); retarded probes shift t by the travel time."""
        t = np.atleast_1d(np.asarray(t, float))
        if not self.retarded or self.rho == 0:
            return self.envelope(t)[:, None] * np.ones(P.shape[0])[None, :]
        return self.envelope(t[:, None] - self.delay(P)[None, :])

    def phase(self, t, P):
        if self.rho == 0:
            return np.ones((np.size(t), P.shape[0]), complex)
        return phase_values(t, P, self.rho, self.omega, self._cf, self._disc)

    def theta_values(self, t, P):
        t = np.atleast_1d(np.asarray(t, float))
        if self.theta_mode == "constant":
            return np.full((t.size, P.shape[0]), complex(self.theta_const))
        E = np.exp(-1j * (np.outer(t, np.ones(P.shape[0])) * self.tau + (P @ self.xi)[None, :]))
        if self.theta is None:
            I = np.zeros((t.size, P.shape[0]))
            dI = np.zeros_like(I)
        else:
            th = np.asarray(self.theta)
            I = np.empty((t.size, P.shape[0]))
            dI = np.empty_like(I)
            hh = 0.25 * min(self.grid.dx)
            for i, sl in enumerate(_vector_slices(th, self.grid, t)):
                if th.shape[0] == 1 and i > 0:
                    I[i], dI[i] = I[0], dI[0]
                    continue
                I[i] = line_integral(sl, self.grid, P, self.omega)
                if self.theta_mode == "gradient":
                    dI[i] = (line_integral(sl, self.grid, P + hh * self.eta, self.omega)
                             - line_integral(sl, self.grid, P - hh * self.eta, self.omega)) / (2 * hh)
        base = E * np.exp(-1j * I)
        if self.theta_mode == "plain":
            return base
        if self.theta_mode == "gradient":
            return -1j * (self.eta @ self.xi + dI) * base
        raise ValueError(f"unknown theta_mode {self.theta_mode!r}")

    def V0(self, t, P):
        t = np.atleast_1d(np.asarray(t, float))
        W = W_values(self.coeffs, self.omega, t, P)
        if self.kind == "nonlocal":
            return self.envelope_at(t, P) * self.theta_values(t, P) * W
        frame = orthonormal_frame(self.omega)
        prof = np.ones(P.shape[0])
        for alpha in frame[1:]:
            prof = prof * spatial_bump(((P - self.x0) @ alpha) / self.delta)
        return self.envelope_at(t, P) * prof[None, :] * W

    # -- grid fields ---------------------------------------------------------
    def amplitudes(self):
        """[V_0, ..., V_N] on the full grid."""
        if self._amps is None or len(self._amps) < self.N + 1:
            g = self.grid
            V = [self.V0(g.t, g.points()).reshape((g.nt + 1,) + g.shape)]
            for k in range(1, self.N + 1):
                V.append(transport_correction(V[-1], self.omega, self.coeffs or _free(g)))
            self._amps = V
        return self._amps[: self.N + 1]

    def amplitude_sum(self):
        V = self.amplitudes()
        return sum(Vk * self.rho ** (-k) for k, Vk in enumerate(V)) if self.rho > 0 else V[0]

    def field(self):
        g = self.grid
        ph = self.phase(g.t, g.points()).reshape((g.nt + 1,) + g.shape)
        return ph * self.amplitude_sum()

    def trace(self):
        return probe_trace(self)


def _free(grid):
    return sample_coefficients(grid)


def probe_trace(probe):
    """Boundary trace of the probe ansatz (nt+1, n_boundary)."""
    g = probe.grid
    P = g.points()[g.boundary_nodes]
    if probe.N == 0:
        vals = probe.phase(g.t, P) * probe.V0(g.t, P)
    else:
        vals = probe.field().reshape(g.nt + 1, -1)[:, g.boundary_nodes]
    tr = BoundaryTrace(vals, g, label=f"{probe.kind} rho={probe.rho:g}")
    end = "end" if probe.direction == "backward" else "start"
    if tr.vanish_order(end) == 0 and np.any(vals):
        raise ValueError(f"{probe.direction} probe trace does not vanish at the {end}")
    return tr


# ---------------------------------------------------------------------------
# operators on smooth amplitude fields

def _d1(V, h, axis):
    return np.gradient(V, h, axis=axis, edge_order=2)


def _d2(V, h, axis):
    V = np.moveaxis(V, axis, 0)
    out = np.empty_like(V)
    out[1:-1] = (V[2:] - 2 * V[1:-1] + V[:-2]) / h ** 2
    out[0] = (2 * V[0] - 5 * V[1] + 4 * V[2] - V[3]) / h ** 2
    out[-1] = (2 * V[-1] - 5 * V[-2] + 4 * V[-3] - V[-4]) / h ** 2
    return np.moveaxis(out, 0, axis)


def _coeff_fields(coeffs):
    g = coeffs.grid
    c = coeffs.c_at(g.t).reshape((-1,) + (1,) * g.n)
    dc = coeffs.dc_at(g.t).reshape((-1,) + (1,) * g.n)
    return c, dc, coeffs.A, coeffs.q


def apply_operator(V, coeffs):
    """L V = i V_t + c Delta_A V + q V by finite differences (full grid)."""
    g = coeffs.grid
    c, _, A, q = _coeff_fields(coeffs)
    out = 1j * _d1(V, g.dt, 0) + q * V
    lap = 0
    for a in range(g.n):
        lap = lap + _d2(V, g.dx[a], 1 + a)
    if coeffs.has_A:
        divA = sum(_d1(A[:, a], g.dx[a], 1 + a) for a in range(g.n))
        grad = sum(A[:, a] * _d1(V, g.dx[a], 1 + a) for a in range(g.n))
        lap = lap + 2j * grad + 1j * divA * V - np.sum(A ** 2, axis=1) * V
    return out + c * lap


def transport_operator(V, omega, coeffs):
    """2i sqrt(c) omega.(grad + iA) V + c'(x.omega)/(2 c^{3/2}) V."""
    g = coeffs.grid
    c, dc, A, _ = _coeff_fields(coeffs)
    omega = np.asarray(omega, float)
    dV = sum(omega[a] * _d1(V, g.dx[a], 1 + a) for a in range(g.n) if omega[a] != 0)
    if coeffs.has_A:
        dV = dV + 1j * np.tensordot(omega, A, axes=([0], [1])) * V
    xw = np.tensordot(omega, g.mesh(), axes=1)
    return 2j * np.sqrt(c) * dV + dc * xw / (2 * c ** 1.5) * V


def conjugated_residual(amps, rho, omega, coeffs):
    """e^{-i Phi} L(e^{i Phi} sum_k rho^-k V_k), exact for the linear phase."""
    V = sum(Vk * rho ** (-k) for k, Vk in enumerate(amps))
    return apply_operator(V, coeffs) + rho * transport_operator(V, omega, coeffs)


def transport_correction(V_prev, omega, coeffs):
    """Next amplitude: V_k(t, y+s w) = i/(2 sqrt c) int_0^s e^{-i int_{s1}^s H.w} (L V_{k-1})(y+s1 w) ds1.

    Characteristics start on the hyperplane through the inflow corner of the
    box (the corner minimising x.omega), so every grid node has s >= 0.
    H = A - c' x/(4c^2).
    """
    g = coeffs.grid
    omega = np.asarray(omega, float)
    LV = apply_operator(V_prev, coeffs)
    P = g.points()
    corners = np.array(np.meshgrid(*[[0.0, L] for L in g.box_lengths], indexing="ij")).reshape(g.n, -1).T
    xref = corners[np.argmin(corners @ omega)]
    w2 = omega @ omega
    S = (P - xref) @ omega / w2
    M = _even(np.max(S) * math.sqrt(w2) / (0.5 * min(g.dx)))
    frac = np.linspace(0.0, 1.0, M + 1)
    s1 = S[:, None] * frac[None, :]                     # (m, M+1)
    pts = (P - S[:, None] * omega)[:, None, :] + s1[..., None] * omega
    flat = pts.reshape(-1, g.n)
    c = coeffs.c_at(g.t)
    dc = coeffs.dc_at(g.t)
    xw = flat @ omega
    out = np.empty_like(V_prev)
    Aw = None
    if coeffs.has_A and coeffs.A.shape[0] == 1:
        Aw = sum(omega[a] * interpolate(coeffs.A[0, a], g, flat) for a in range(g.n) if omega[a])
    for k, tt in enumerate(g.t):
        Hw = -dc[k] / (4 * c[k] ** 2) * xw
        if coeffs.has_A:
            if Aw is not None:
                Hw = Hw + Aw
            else:
                Ak = coeffs.A_at(tt)
                Hw = Hw + sum(omega[a] * interpolate(Ak[a], g, flat) for a in range(g.n) if omega[a])
        Hw = Hw.reshape(s1.shape)
        G = cumulative_simpson(Hw, x=frac, axis=1, initial=0.0) * S[:, None]
        f = interpolate(LV[k], g, flat).reshape(s1.shape) * np.exp(1j * G)
        integ = simpson(f, x=frac, axis=1) * S
        out[k] = (1j / (2 * math.sqrt(c[k])) * np.exp(-1j * G[:, -1]) * integ).reshape(g.shape)
    return out


def residual_audit(probe, coeffs, rho_list, N=None, window=None):
    """||L(e^{i Phi} sum_{k<=N} rho^-k V_k)||_{L2(Q)} over rho and the log-log slope.

    The phase is applied analytically (conjugated operator), so the grid only
    has to resolve the amplitudes.  `window` optionally restricts the norm to
    a time interval (t_lo, t_hi).
    """
    N = probe.N if N is None else N
    probe.N = N
    amps = probe.amplitudes()
    g = coeffs.grid
    norms = []
    for rho in rho_list:
        R = conjugated_residual(amps, rho, probe.omega, coeffs)
        if window is not None:
            R = R * ((g.t >= window[0]) & (g.t <= window[1])).reshape((-1,) + (1,) * g.n)
        norms.append(discrete_norm(R, g))
    norms = np.array(norms)
    with np.errstate(divide="ignore"):
        slope = float(np.polyfit(np.log(rho_list), np.log(norms), 1)[0]) if np.all(norms > 0) else float("nan")
    return dict(rho=list(map(float, rho_list)), residual=norms.tolist(), slope=slope, N=N)
