"""Frequency tuples that isolate one nonlinear monomial.

For a product of m probe solutions, the first b unconjugated and the rest
conjugated, paired against a backward probe, the combined phase is
rho (x.P - rho E t) with momentum defect P and energy defect E.  A design
makes P = E = 0 for the targeted class and keeps every other class away
from zero.
"""

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import sympy
from scipy.integrate import simpson

from .go import GUARD

D_MIN = 1e-9


@dataclass
class FrequencyDesign:
    m: int
    b: int
    exact: list          # sympy 2-vectors omega_0 .. omega_m
    report: list = field(default_factory=list)
    d_min: float = float("nan")
    certified: bool = False
    scalar: object = None    # transverse length s for 1 < b < m

    @property
    def vectors(self):
        """Float shadow, shape (m+1, 2); row l is omega_l."""
        return np.array([[float(c) for c in v] for v in self.exact])

    def embed(self, n):
        out = np.zeros((self.m + 1, n))
        out[:, :2] = self.vectors
        return out

    def as_dict(self):
        return dict(m=self.m, b=self.b,
                    omega=[[str(c) for c in v] for v in self.exact],
                    omega_float=self.vectors.tolist(),
                    d_min=self.d_min, certified=self.certified,
                    **({} if self.scalar is None else dict(scalar=str(self.scalar))))


def _vec(x, y):
    return sympy.Matrix([sympy.nsimplify(x), sympy.nsimplify(y)])


def _sq(v):
    return sympy.simplify((v.T * v)[0])


def _all_holomorphic(m):
    """u_1..u_m with |sum u|^2 = sum |u|^2 (used for b = m and b = 1)."""
    u = [_vec(1, 0) for _ in range(m - 1)]
    u.append(_vec(sympy.Rational(-(m - 2), 2), 1))
    return u


def design(m, b):
    """Frequency design for the monomial u^b conj(u)^(m-b); omega_0 first."""
    if not (2 <= m <= 5 and 1 <= b <= m):
        raise ValueError(f"unsupported design (m={m}, b={b}); need 2 <= m <= 5, 1 <= b <= m")
    s = None
    if b == m:
        w = _all_holomorphic(m)
        w0 = sum(w, sympy.zeros(2, 1))
    elif b == 1:
        u = _all_holomorphic(m)
        w = [sum(u, sympy.zeros(2, 1))] + u[:-1]
        w0 = u[-1]
    else:
        s = sympy.sqrt(sympy.Rational(b * (b - 1), (m - b) + (m - b) ** 2))
        w = [_vec(-(b - 1), 0)] + [_vec(1, 0) for _ in range(b - 1)]
        w += [sympy.Matrix([0, s]) for _ in range(m - b)]
        w0 = sympy.Matrix([0, (b - m) * s])
    d = FrequencyDesign(m, b, [w0] + w, scalar=s)
    return certify(d)


def defects(vectors, U, exact=True):
    """Momentum and energy defects of the class with unconjugated index set U.

    vectors: omega_0..omega_m; U subset of {1..m}.
    """
    m = len(vectors) - 1
    if exact:
        mom = -vectors[0]
        en = -_sq(vectors[0])
        for l in range(1, m + 1):
            sgn = 1 if l in U else -1
            mom = mom + sgn * vectors[l]
            en = en + sgn * _sq(vectors[l])
        return sympy.simplify(mom), sympy.simplify(en)
    V = np.asarray(vectors, float)
    sg = np.array([1.0 if l in U else -1.0 for l in range(1, m + 1)])
    mom = sg @ V[1:] - V[0]
    en = sg @ np.sum(V[1:] ** 2, axis=1) - V[0] @ V[0]
    return mom, en


def _key(v):
    return tuple(sympy.nsimplify(c) for c in v)


def certify(d):
    """Enumerate every conjugation pattern and record its phase defect."""
    m, b = d.m, d.b
    V = d.exact
    shadow = d.vectors
    target_u = Counter(_key(V[l]) for l in range(1, b + 1))
    report = []
    d_min = math.inf
    witness = None
    for sigma in range(1, m + 1):
        for U in itertools.combinations(range(1, m + 1), sigma):
            mom, en = defects(V, set(U))
            fm, fe = defects(shadow, set(U), exact=False)
            dist = float(np.linalg.norm(fm) + abs(fe))
            is_target = sigma == b and Counter(_key(V[l]) for l in U) == target_u
            exact_zero = all(sympy.simplify(c) == 0 for c in mom) and sympy.simplify(en) == 0
            report.append(dict(sigma=sigma, U=list(U), momentum=float(np.linalg.norm(fm)),
                               energy=float(abs(fe)), d=dist, target=is_target,
                               exact_zero=bool(exact_zero)))
            if is_target:
                if not exact_zero:
                    raise ValueError(f"design (m={m}, b={b}) misses its target class U={U}")
                continue
            if exact_zero or dist < d_min:
                d_min = 0.0 if exact_zero else dist
                witness = (sigma, U)
    d.report = report
    d.d_min = float(d_min)
    d.certified = d_min >= D_MIN
    d.conditions = conditions(d)
    if not d.certified:
        raise ValueError(f"degenerate design (m={m}, b={b}): competitor sigma={witness[0]}, "
                         f"U={list(witness[1])} has defect {d_min:.3g}")
    return d


def conditions(d):
    """Span and proper-subset-sum conditions on the two groups of vectors."""
    m, b = d.m, d.b
    V = d.exact
    first = [V[l] for l in range(1, b + 1)]
    second = [V[l] for l in range(b + 1, m + 1)]

    def outside_span(vs, basis):
        if not basis:
            return all(any(c != 0 for c in v) for v in vs)
        r = sympy.Matrix.hstack(*basis).rank()
        return all(sympy.Matrix.hstack(*basis, v).rank() > r for v in vs)

    def proper_sums_nonzero(vs):
        for k in range(1, len(vs)):
            for S in itertools.combinations(vs, k):
                tot = sum(S, sympy.zeros(2, 1))
                if all(sympy.simplify(c) == 0 for c in tot):
                    return False
        return True

    return dict(a=outside_span(first, second), b=outside_span(second, first),
                c=proper_sums_nonzero(first), d=proper_sums_nonzero(second))


def check_constraints(d, tol=0.0):
    """Exact momentum/energy balance of the targeted class (and float shadow)."""
    mom, en = defects(d.exact, set(range(1, d.b + 1)))
    exact_ok = all(sympy.simplify(c) == 0 for c in mom) and sympy.simplify(en) == 0
    fm, fe = defects(d.vectors, set(range(1, d.b + 1)), exact=False)
    return exact_ok, float(np.linalg.norm(fm) + abs(fe))


def stationary_decay_probe(f, momentum, energy, rho_list, grid):
    """|int_Q f e^{i rho (x.P - rho E t)}| over rho and the fitted log-log slope.

    f is an array on the space-time grid or a callable f(t, *x).
    """
    P = np.zeros(grid.n)
    P[:len(momentum)] = momentum
    if callable(f):
        X = grid.mesh()
        T = grid.t.reshape((-1,) + (1,) * grid.n)
        f = np.asarray(f(T, *X)) * np.ones((grid.nt + 1,) + grid.shape)
    vals = []
    for rho in rho_list:
        lim = GUARD * (1 + 1e-12)
        if rho * np.max(np.abs(P)) * max(grid.dx) > lim or rho ** 2 * abs(energy) * grid.dt > lim:
            raise ValueError(f"rho = {rho:g} violates the resolution guard for this combination")
        X = grid.mesh()
        T = grid.t.reshape((-1,) + (1,) * grid.n)
        ph = np.exp(1j * rho * (np.tensordot(P, X, axes=1)[None] - rho * energy * T))
        g = f * ph
        for a in range(grid.n, 0, -1):
            g = simpson(g, dx=grid.dx[a - 1], axis=a)
        vals.append(abs(simpson(g, dx=grid.dt, axis=0)))
    vals = np.array(vals)
    slope = float(np.polyfit(np.log(rho_list), np.log(np.maximum(vals, 1e-300)), 1)[0])
    return dict(rho=list(map(float, rho_list)), value=vals.tolist(), slope=slope)
