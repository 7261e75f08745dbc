"""First and mixed epsilon-derivatives of solutions and both sides of the
integral identities that link DN data to coefficient differences."""

import itertools
from dataclasses import dataclass

import numpy as np

from .fields import BoundaryTrace, pairing
from .solver import MagneticOperator, dn_extract, flux_record, solve


@dataclass(frozen=True)
class LinearizationStencil:
    """Tensor product of central differences in each epsilon_l.

    Only the 2^m corners of {-1,0,1}^m carry weight; nodes with a zero
    coordinate are pruned.
    """
    m: int
    eps0: float

    def nodes(self, pruned=True):
        if pruned:
            return [np.array(s, float) for s in itertools.product((-1, 1), repeat=self.m)]
        return [np.array(s, float) for s in itertools.product((-1, 0, 1), repeat=self.m)]

    def weight(self, node):
        node = np.asarray(node)
        if np.any(node == 0):
            return 0.0
        return float(np.prod(node)) / (2 * self.eps0) ** self.m

    def apply(self, fn):
        """Mixed derivative estimate of fn at 0; fn maps an eps-vector to an array."""
        total = 0
        for node in self.nodes():
            total = total + self.weight(node) * fn(self.eps0 * node)
        return total


def default_eps(traces, eps=1e-2):
    scale = max(np.max(np.abs(t.values if isinstance(t, BoundaryTrace) else t)) for t in traces)
    return eps / scale if scale > 0 else eps


def _combine(traces, epsv):
    vals = sum(e * (t.values if isinstance(t, BoundaryTrace) else np.asarray(t))
               for e, t in zip(epsv, traces))
    return BoundaryTrace(np.asarray(vals, complex), traces[0].grid if isinstance(traces[0], BoundaryTrace) else None)


def first_derivative(coeffs, f, eps0=None, tol=1e-12, **kw):
    """(u(eps0 f) - u(-eps0 f)) / (2 eps0) with nonlinear solves."""
    eps0 = default_eps([f]) if eps0 is None else eps0
    st = LinearizationStencil(1, eps0)
    return st.apply(lambda e: solve(coeffs, _scaled(f, e[0]), nonlinear=True, tol=tol, **kw))


def _scaled(f, s):
    return BoundaryTrace(f.values * s, f.grid)


def mixed_derivative(coeffs, traces, eps0=None, tol=1e-12, **kw):
    """w = d_{eps_1} ... d_{eps_m} u at eps = 0 by the signed-corner stencil."""
    m = len(traces)
    eps0 = default_eps(traces) if eps0 is None else eps0
    st = LinearizationStencil(m, eps0)
    return st.apply(lambda e: solve(coeffs, _combine(traces, e), nonlinear=True, tol=tol, **kw))


def mixed_dn(coeffs, traces, eps0=None, mode="flux", tol=1e-12, **kw):
    """Mixed derivative of the DN record (memory-light: no fields kept)."""
    m = len(traces)
    eps0 = default_eps(traces) if eps0 is None else eps0
    st = LinearizationStencil(m, eps0)
    rec = None
    for node in st.nodes():
        f = _combine(traces, eps0 * node)
        if mode == "flux":
            r = flux_record(coeffs, f, nonlinear=True, tol=tol, **kw)
        else:
            r = dn_extract(solve(coeffs, f, nonlinear=True, tol=tol, **kw), coeffs)
        w = st.weight(node)
        if rec is None:
            rec = r
            rec.values = w * r.values
        else:
            rec.values = rec.values + w * r.values
    rec.meta = dict(order=m, eps0=eps0)
    return rec


# ---------------------------------------------------------------------------
# cascade (independent route)

def _subsets(m):
    out = []
    for k in range(1, m + 1):
        out.extend(frozenset(c) for c in itertools.combinations(range(m), k))
    return out


def _power_series(u, sigma, beta, S):
    """Coefficient of eps^S in u^sigma conj(u)^beta, u given by its square-free
    coefficients u[T] (u[empty] = 0)."""
    factors = [False] * sigma + [True] * beta
    total = 0

    def rec(idx, remaining, acc):
        nonlocal total
        if idx == len(factors):
            if not remaining:
                total = total + acc
            return
        rem = sorted(remaining)
        # each factor takes a nonempty subset of what remains
        for k in range(1, len(rem) - (len(factors) - idx - 1) + 1):
            for T in itertools.combinations(rem, k):
                T = frozenset(T)
                if T not in u:
                    continue
                val = np.conj(u[T]) if factors[idx] else u[T]
                rec(idx + 1, remaining - T, acc * val)

    rec(0, frozenset(S), 1)
    return total


def nonlinear_source(coeffs, u_parts, S, k_levels=None):
    """Coefficient of eps^S in N(t, x, u) for u = sum_T eps^T u_T (fields)."""
    g = coeffs.grid
    out = 0
    for (s, b), arr in coeffs.B.items():
        if s + b > len(S):
            continue
        term = _power_series(u_parts, s, b, S)
        if isinstance(term, int):
            continue
        Bf = arr if arr.shape[0] > 1 else arr[0][None]
        out = out + Bf * term
    if isinstance(out, int):
        return np.zeros((g.nt + 1,) + g.shape, complex)
    return out


def cascade(coeffs, traces, return_parts=False):
    """Mixed derivative by successive linear solves.

    v_l solves the linear problem with data f_l; every higher coefficient w_S
    solves the linear problem with zero data and source equal to the eps^S
    coefficient of the nonlinearity.
    """
    m = len(traces)
    parts = {}
    for S in _subsets(m):
        if len(S) == 1:
            (l,) = S
            parts[S] = solve(coeffs, traces[l])
        else:
            src = nonlinear_source(coeffs, parts, S)
            parts[S] = solve(coeffs, None, F=src) if np.any(src) else np.zeros_like(parts[frozenset([0])])
    w = parts[frozenset(range(m))]
    return (w, parts) if return_parts else w


def permutation_source(coeffs_diff_B, v, sigma_list=None):
    """sum_sigma B_{sigma(m-sigma)} sum_{pi in S_m} v_pi(1)..v_pi(sigma) conj(v_pi(sigma+1)..v_pi(m)).

    coeffs_diff_B: dict (sigma, beta) -> (T?, *nx) array of coefficient differences.
    v: list of m fields.
    """
    m = len(v)
    total = 0
    for (s, b), arr in coeffs_diff_B.items():
        if s + b != m or (sigma_list is not None and s not in sigma_list):
            continue
        acc = 0
        for perm in itertools.permutations(range(m)):
            term = 1
            for j, idx in enumerate(perm):
                term = term * (v[idx] if j < s else np.conj(v[idx]))
            acc = acc + term
        total = total + arr * acc
    return total


# ---------------------------------------------------------------------------
# identities

def identity_boundary_side(dn_diff_record, v0_trace):
    """sum over accessible faces and times of (dN_1 - dN_2) conj(v0)."""
    if dn_diff_record.grid is not v0_trace.grid and dn_diff_record.grid.spec() != v0_trace.grid.spec():
        raise ValueError("grid mismatch between record and trace")
    return dn_diff_record.pair(v0_trace)


def cn_pairing(F, z, grid):
    """Half-step Crank-Nicolson pairing sum_n dt vol <F_hat, z_hat> over interior nodes."""
    Fh = 0.5 * (F[1:] + F[:-1])
    zh = 0.5 * (z[1:] + z[:-1])
    vol = float(np.prod(grid.dx))
    inner = (Fh * np.conj(zh)).reshape(grid.nt, -1)[:, grid.interior_nodes]
    return complex(grid.dt * vol * inner.sum())


def volume_side_linear(coeffs1, coeffs2, v1, v0):
    """sum_n dt vol <(H_1 - H_2) v1_hat, v0_hat>: the discrete form of
    int (2i A~.grad + i div A~ - (|A1|^2 - |A2|^2) + q~) v1 conj(v0)."""
    g = coeffs1.grid
    op1, op2 = MagneticOperator(coeffs1), MagneticOperator(coeffs2)
    vol = float(np.prod(g.dx))
    total = 0j
    for k in range(g.nt):
        uh = 0.5 * (v1[k] + v1[k + 1]).ravel()
        zh = 0.5 * (v0[k] + v0[k + 1]).ravel()
        d = op1.apply_full(uh, k) - op2.apply_full(uh, k)
        total += g.dt * vol * np.sum(d * np.conj(zh[op1.inodes]))
    return total


def linear_integrand(coeffs1, coeffs2, v1):
    """(2i A~.grad + i div A~ - (|A1|^2 - |A2|^2) + q~) v1 by centered differences."""
    g = coeffs1.grid
    At = coeffs1.A - coeffs2.A
    out = (coeffs1.q - coeffs2.q) * v1
    if np.any(At):
        grad = [np.gradient(v1, g.dx[a], axis=1 + a, edge_order=2) for a in range(g.n)]
        div = sum(np.gradient(At[:, a], g.dx[a], axis=1 + a, edge_order=2) for a in range(g.n))
        out = out + 2j * sum(At[:, a] * grad[a] for a in range(g.n)) + 1j * div * v1
        out = out - (np.sum(coeffs1.A ** 2, axis=1) - np.sum(coeffs2.A ** 2, axis=1)) * v1
    return out


def identity_volume_side(coeffs1, coeffs2, v_fields, v0, form="discrete"):
    """Volume side of the identity, with the convention boundary + volume = 0.

    Linear coefficients (one field v1): +int P v1 conj(v0) with P the
    difference of the two magnetic Schroedinger operators.
    Nonlinear coefficients (m fields): -int N~ conj(v0) with N~ the
    permutation-sum source built from the B differences of order m.
    form "discrete" uses the half-step quadrature consistent with the
    solver; "continuum" uses centered differences and trapezoid weights.
    """
    g = coeffs1.grid
    if not isinstance(v_fields, (list, tuple)):
        v_fields = [v_fields]
    if len(v_fields) == 1:
        if form == "discrete":
            return volume_side_linear(coeffs1, coeffs2, v_fields[0], v0)
        return pairing(linear_integrand(coeffs1, coeffs2, v_fields[0]) * np.ones_like(v0), v0, g)
    m = len(v_fields)
    dB = {}
    for key in set(coeffs1.B) | set(coeffs2.B):
        if sum(key) != m:
            continue
        b1 = coeffs1.B.get(key, 0)
        b2 = coeffs2.B.get(key, 0)
        dB[key] = np.asarray(b1) - np.asarray(b2)
    src = permutation_source(dB, list(v_fields))
    if isinstance(src, int):
        return 0j
    src = src * np.ones_like(v0)
    if form == "discrete":
        return -cn_pairing(src, v0, g)
    return -pairing(src, v0, g)


def duality_mismatch(coeffs1, coeffs2, traces, g0, eps0=None, **kw):
    """Both sides of the order-m identity and |boundary + volume| / |boundary|.

    The boundary side uses the mixed DN derivatives of the two coefficient
    sets; the volume side uses linear solutions with the common linear part.
    """
    r = mixed_dn(coeffs1, traces, eps0, **kw) - mixed_dn(coeffs2, traces, eps0, **kw)
    bs = identity_boundary_side(r, g0)
    v = [solve(coeffs2, f) for f in traces]
    z = solve(coeffs2, g0, direction="backward")
    vs = identity_volume_side(coeffs1, coeffs2, v, z)
    return dict(boundary=bs, volume=vs, mismatch=float(abs(bs + vs) / max(abs(bs), 1e-300)))
