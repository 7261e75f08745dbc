"""Crank-Nicolson solvers for i u_t + c(t) Delta_A u + q u = F with Dirichlet data.

The magnetic Laplacian is discretised with link phases exp(i dx A) on the
grid edges (A averaged to the edge midpoint), which keeps the operator
Hermitian.  Coefficients are evaluated at the half step, so the scheme is
time-reversible and conserves the L2 norm exactly when F and the boundary
data vanish.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import BoundaryTrace, CoefficientSet, slice_norms

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """Fixed-point iteration for the nonlinear term failed."""


class IncompatibleTraceError(ValueError):
    pass


@dataclass
class SolveRequest:
    coeffs: CoefficientSet
    f: object = None                  # BoundaryTrace, (nt+1, nb) array or None
    F: object = None                  # (nt+1, *nx) source, callable k -> (*nx), or None
    direction: str = "forward"
    nonlinear: bool = False
    tol: float = 1e-10
    max_iter: int = 50
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# operator assembly

class MagneticOperator:
    """Assembles H = c Delta_A + q restricted to interior rows."""

    def __init__(self, coeffs):
        self.coeffs = coeffs
        g = self.grid = coeffs.grid
        n = g.n
        flat = np.arange(g.size).reshape(g.shape)
        self.bnodes = g.boundary_nodes
        self.inodes = g.interior_nodes
        self.iidx = np.full(g.size, -1)
        self.iidx[self.inodes] = np.arange(self.inodes.size)
        self.bidx = np.full(g.size, -1)
        self.bidx[self.bnodes] = np.arange(self.bnodes.size)
        self.ni = self.inodes.size
        self.nb = self.bnodes.size
        self.pairs = []
        for a in range(n):
            sl = [slice(None)] * n
            sl[a] = slice(0, -1)
            p = flat[tuple(sl)].ravel()
            sl[a] = slice(1, None)
            r = flat[tuple(sl)].ravel()
            self.pairs.append((p, r))
        self._cache = {}

    def _fields_at_step(self, k):
        """c, A, q at the midpoint of step k (levels k and k+1)."""
        co, g = self.coeffs, self.grid
        th = (k + 0.5) * g.dt
        c = float(co.c_at(th))
        A = co.A[0] if co.A.shape[0] == 1 else 0.5 * (co.A[k] + co.A[k + 1])
        q = co.q[0] if co.q.shape[0] == 1 else 0.5 * (co.q[k] + co.q[k + 1])
        return c, A, q

    def step_key(self, k):
        co = self.coeffs
        static = co.A.shape[0] == 1 and co.q.shape[0] == 1
        if not static:
            return k
        return float(co.c_at((k + 0.5) * self.grid.dt))

    def assemble(self, k):
        """Return (H_II, H_IB, c, A) for step k."""
        c, A, q = self._fields_at_step(k)
        g = self.grid
        rows_ii, cols_ii, vals_ii = [], [], []
        rows_ib, cols_ib, vals_ib = [], [], []
        Af = A.reshape(g.n, -1)
        for a, (p, r) in enumerate(self.pairs):
            h = g.dx[a]
            U = np.exp(1j * h * 0.5 * (Af[a, p] + Af[a, r]))
            v_pr = c * U / h ** 2
            v_rp = np.conj(v_pr)
            for row, col, val in ((p, r, v_pr), (r, p, v_rp)):
                ri = self.iidx[row]
                keep = ri >= 0
                ci = self.iidx[col[keep]]
                inside = ci >= 0
                rows_ii.append(ri[keep][inside])
                cols_ii.append(ci[inside])
                vals_ii.append(val[keep][inside])
                rows_ib.append(ri[keep][~inside])
                cols_ib.append(self.bidx[col[keep][~inside]])
                vals_ib.append(val[keep][~inside])
        diag = -2.0 * c * sum(1.0 / h ** 2 for h in g.dx) + q.ravel()[self.inodes]
        rows_ii.append(np.arange(self.ni))
        cols_ii.append(np.arange(self.ni))
        vals_ii.append(diag.astype(complex))
        H_II = sp.csc_matrix((np.concatenate(vals_ii), (np.concatenate(rows_ii), np.concatenate(cols_ii))),
                             shape=(self.ni, self.ni))
        H_IB = sp.csr_matrix((np.concatenate(vals_ib), (np.concatenate(rows_ib), np.concatenate(cols_ib))),
                             shape=(self.ni, self.nb))
        return H_II, H_IB, c, A

    def step_system(self, k, backward=False):
        """Cached (lu, M_rhs, H_IB, c, A) for step k."""
        key = (self.step_key(k), backward)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        H_II, H_IB, c, A = self.assemble(k)
        dt = self.grid.dt
        I = sp.identity(self.ni, dtype=complex, format="csc")
        s = 1.0 if backward else -1.0
        lhs = (I + s * 0.5j * dt * H_II).tocsc()
        rhs = (I - s * 0.5j * dt * H_II).tocsr()
        try:
            lu = spla.splu(lhs)
        except RuntimeError as exc:
            raise RuntimeError(f"sparse factorisation failed at step {k}: {exc}") from exc
        out = (lu, rhs, H_IB, c, A)
        if len(self._cache) > 4:
            self._cache.clear()
        self._cache[key] = out
        return out

    def apply_full(self, u, k):
        """(H u) at interior nodes using the full-grid field u (flat), step k."""
        H_II, H_IB, _, _ = self.assemble(k)
        return H_II @ u[self.inodes] + H_IB @ u[self.bnodes]


# ---------------------------------------------------------------------------
# DN records

@dataclass(eq=False)
class DNRecord:
    """Neumann-type data c^s nu.(grad + iA)u on the accessible faces.

    mode "order2": one-sided three-point stencil at every time level.
    mode "flux":   conservative edge flux at the half steps; with these
                   values the discrete Green identity holds exactly.
    """
    values: np.ndarray     # (n_times, n_slots)
    mode: str
    nodes: np.ndarray      # flat grid index per slot
    weights: np.ndarray    # surface weight per slot
    tweights: np.ndarray   # time weight per row
    grid: object
    scaled: bool = False
    meta: dict = field(default_factory=dict)

    def __sub__(self, other):
        if self.mode != other.mode or self.values.shape != other.values.shape:
            raise ValueError("DN records are not comparable")
        return DNRecord(self.values - other.values, self.mode, self.nodes, self.weights,
                        self.tweights, self.grid, self.scaled,
                        dict(meta="difference"))

    def trace_values(self, trace):
        """Boundary trace (nt+1, nb) sampled on this record's slots and times."""
        g = self.grid
        vals = trace.values if isinstance(trace, BoundaryTrace) else np.asarray(trace)
        pos = np.searchsorted(g.boundary_nodes, self.nodes)
        v = vals[:, pos]
        if self.mode == "flux":
            v = 0.5 * (v[1:] + v[:-1])
        return v

    def pair(self, trace):
        """Sum over slots and times of record * conj(trace)."""
        v = self.trace_values(trace)
        return complex(self.tweights @ (self.values * np.conj(v)) @ self.weights)

    def norm(self):
        return float(np.sqrt(self.tweights @ np.abs(self.values) ** 2 @ self.weights))


def record_slots(grid, mode):
    """Slots of a DN record: nodes, inward, inward2, weights, axis, side."""
    nodes, inward, inward2, weights, axis, side = [], [], [], [], [], []
    for f in grid.gamma_faces:
        sel = f.open_mask if mode == "flux" else np.ones(f.nodes.size, bool)
        nodes.append(f.nodes[sel])
        inward.append(f.inward[sel])
        inward2.append(f.inward2[sel])
        w = np.full(sel.sum(), f.cell_area) if mode == "flux" else f.weights[sel]
        weights.append(w)
        axis.append(np.full(sel.sum(), f.axis))
        side.append(np.full(sel.sum(), f.side))
    cat = np.concatenate
    return cat(nodes), cat(inward), cat(inward2), cat(weights), cat(axis), cat(side)


def _flux(u_hat, slots, c, A, grid):
    nodes, inward, _, _, axis, side = slots
    Af = A.reshape(grid.n, -1)
    h = np.asarray(grid.dx)[axis]
    Abar = 0.5 * (Af[axis, nodes] + Af[axis, inward])
    return c * (u_hat[nodes] - np.exp(-1j * side * h * Abar) * u_hat[inward]) / h


def dn_extract(field, coeffs, grid=None, scaled=False, meta=None):
    """Order-2 one-sided normal derivative plus i nu.A u on the accessible faces."""
    grid = grid or coeffs.grid
    u = np.asarray(field).reshape(grid.nt + 1, -1)
    slots = record_slots(grid, "order2")
    nodes, inward, inward2, weights, axis, side = slots
    h = np.asarray(grid.dx)[axis]
    vals = (3 * u[:, nodes] - 4 * u[:, inward] + u[:, inward2]) / (2 * h)
    if coeffs.has_A:
        for k in range(grid.nt + 1):
            Ak = coeffs.A_at(grid.t[k]).reshape(grid.n, -1)
            vals[k] += 1j * side * Ak[axis, nodes] * u[k, nodes]
    if scaled:
        vals = vals * coeffs.c_at(grid.t)[:, None]
    return DNRecord(vals, "order2", nodes, weights, grid.time_weights(), grid, scaled,
                    dict(meta or {}))


# ---------------------------------------------------------------------------
# time marching

def _trace_array(f, grid):
    if f is None:
        return np.zeros((grid.nt + 1, grid.boundary_nodes.size), complex)
    vals = f.values if isinstance(f, BoundaryTrace) else np.asarray(f)
    if vals.shape != (grid.nt + 1, grid.boundary_nodes.size):
        raise ValueError(f"trace shape {vals.shape} does not match grid")
    return vals.astype(complex, copy=False)


def _source_getter(F, grid):
    if F is None:
        return None
    if callable(F):
        return lambda k: np.asarray(F(k)).ravel()
    F = np.asarray(F)
    if F.shape != (grid.nt + 1,) + grid.shape:
        raise ValueError(f"source shape {F.shape} does not match grid")
    return lambda k: F[k].ravel()


def nonlinear_term(coeffs, u, t):
    """sum B_{sb}(t) u^s conj(u)^b on the full grid (flat)."""
    out = np.zeros_like(u)
    ub = np.conj(u)
    for (s, b), arr in coeffs.B.items():
        Bt = coeffs.B_at((s, b), t).ravel()
        out += Bt * u ** s * ub ** b
    return out


def march(coeffs, f=None, F=None, direction="forward", nonlinear=False, tol=1e-10,
          max_iter=50, keep=True, flux=False, info=None):
    """Run the Crank-Nicolson scheme.

    Returns (levels, flux_values): levels is (nt+1, *nx) when keep is True,
    flux_values is (nt, n_slots) when flux is True (conservative record at
    half steps, including the factor c).
    """
    grid = coeffs.grid
    op = MagneticOperator(coeffs)
    fv = _trace_array(f, grid)
    src = _source_getter(F, grid)
    dt = grid.dt
    backward = direction == "backward"
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    if nonlinear and backward:
        raise ValueError("nonlinear solves run forward only")
    scale = max(np.max(np.abs(fv), initial=0.0), 1e-300)
    start = grid.nt if backward else 0
    if np.max(np.abs(fv[start])) > 1e-12 * scale:
        raise IncompatibleTraceError(
            f"{direction} solve needs boundary data vanishing at t = {grid.t[start]:g}")
    info = {} if info is None else info
    info.setdefault("iterations", [])
    slots = record_slots(grid, "flux") if flux else None
    levels = np.zeros((grid.nt + 1, grid.size), complex) if keep else None
    fl = np.zeros((grid.nt, slots[0].size), complex) if flux else None
    I, Bn = op.inodes, op.bnodes

    u = np.zeros(grid.size, complex)
    u[Bn] = fv[start]
    if keep:
        levels[start] = u
    order = range(grid.nt - 1, -1, -1) if backward else range(grid.nt)
    prev_u = None
    for k in order:
        lu, M, H_IB, c, A = op.step_system(k, backward)
        cur, nxt = (k + 1, k) if backward else (k, k + 1)
        ghat = fv[k] + fv[k + 1]
        sgn = -1.0 if backward else 1.0
        rhs = M @ u[I] + sgn * 0.5j * dt * (H_IB @ ghat)
        if src is not None:
            rhs -= sgn * 0.5j * dt * (src(k) + src(k + 1))[I]
        new = np.empty_like(u)
        new[Bn] = fv[nxt]
        if nonlinear:
            t_cur, t_nxt = grid.t[cur], grid.t[nxt]
            rhs_lin = rhs - 0.5j * dt * nonlinear_term(coeffs, u, t_cur)[I]
            guess = u.copy() if prev_u is None else 2 * u - prev_u
            guess[Bn] = fv[nxt]
            for it in range(1, max_iter + 1):
                try:
                    with np.errstate(over="raise", invalid="raise"):
                        nl = nonlinear_term(coeffs, guess, t_nxt)[I]
                except FloatingPointError:
                    raise NonConvergenceError(f"fixed point blew up at step {k}") from None
                new[I] = lu.solve(rhs_lin - 0.5j * dt * nl)
                diff = np.max(np.abs(new[I] - guess[I]), initial=0.0)
                if not np.all(np.isfinite(new)):
                    raise NonConvergenceError(f"non-finite values at step {k}")
                size = np.max(np.abs(new), initial=0.0)
                if diff <= tol * max(size, 1e-300):
                    break
                guess = new.copy()
            else:
                raise NonConvergenceError(
                    f"fixed point did not converge at step {k} after {max_iter} iterations "
                    f"(last update {diff:.3g}, field size {size:.3g}); data may be too large")
            info["iterations"].append(it)
        else:
            new[I] = lu.solve(rhs)
            if not np.all(np.isfinite(new[I])):
                raise NonConvergenceError(f"non-finite values at step {k}")
        if flux:
            fl[k] = _flux(0.5 * (u + new), slots, c, A, grid)
        prev_u, u = u, new
        if keep:
            levels[nxt] = u
    if keep:
        levels = levels.reshape((grid.nt + 1,) + grid.shape)
    return levels, fl


def solve_linear(req):
    """Linear solve of a SolveRequest; returns the (nt+1, *nx) field."""
    if req.nonlinear:
        raise ValueError("request is nonlinear; use solve_nonlinear")
    out, _ = march(req.coeffs, req.f, req.F, req.direction, info=req.info)
    return out


def solve_nonlinear(req):
    """Nonlinear forward solve with per-step fixed-point iteration."""
    out, _ = march(req.coeffs, req.f, req.F, "forward", nonlinear=True, tol=req.tol,
                   max_iter=req.max_iter, info=req.info)
    return out


def solve(coeffs, f=None, F=None, direction="forward", nonlinear=False, **kw):
    return march(coeffs, f, F, direction, nonlinear, **kw)[0]


def flux_record(coeffs, f=None, F=None, direction="forward", nonlinear=False, meta=None, **kw):
    """Solve without storing the field and return the conservative DN record."""
    grid = coeffs.grid
    _, fl = march(coeffs, f, F, direction, nonlinear, keep=False, flux=True, **kw)
    nodes, _, _, weights, _, _ = record_slots(grid, "flux")
    return DNRecord(fl, "flux", nodes, weights, np.full(grid.nt, grid.dt), grid, True,
                    dict(meta or {}))


def dn_map(coeffs, f, mode="order2", scaled=False, nonlinear=False, **kw):
    """Neumann data of the forward solution with Dirichlet data f."""
    if mode == "flux":
        return flux_record(coeffs, f, nonlinear=nonlinear, **kw)
    u = solve(coeffs, f, nonlinear=nonlinear, **kw)
    return dn_extract(u, coeffs, scaled=scaled)


def conservation_audit(field, grid):
    """||u(t_k)||_{L2(Omega)} for every time level."""
    return slice_norms(field, grid)


def relative_drift(series, start):
    """Max relative deviation of the norm series from its value at index start."""
    ref = series[start]
    if ref == 0:
        return float(np.max(np.abs(series[start:])))
    return float(np.max(np.abs(series[start:] - ref)) / ref)
