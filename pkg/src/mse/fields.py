"""Grids, coefficient sets, cutoffs, quadrature norms and the MSEARR container."""

import ast
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class Face:
    axis: int
    side: int          # -1 for x_axis = 0, +1 for x_axis = L
    label: str
    nodes: np.ndarray  # flat indices of all nodes on the face (edges included)
    inward: np.ndarray  # flat index of the neighbour one step inside along -normal
    inward2: np.ndarray  # two steps inside
    weights: np.ndarray  # trapezoid surface weights
    open_mask: np.ndarray  # True where the inward neighbour is an interior node
    cell_area: float     # product of the tangential spacings


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    n: int
    box_lengths: tuple
    T: float
    nx: tuple
    nt: int
    gamma: tuple = ()   # face labels making up the accessible boundary part
    faces: tuple = field(default=(), repr=False)

    @property
    def dx(self):
        return tuple(L / (m - 1) for L, m in zip(self.box_lengths, self.nx))

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def shape(self):
        return tuple(self.nx)

    @property
    def size(self):
        return int(np.prod(self.nx))

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def t_half(self):
        return (np.arange(self.nt) + 0.5) * self.dt

    def axes(self):
        return [np.linspace(0.0, L, m) for L, m in zip(self.box_lengths, self.nx)]

    def mesh(self):
        """Coordinate arrays, shape (n, *nx)."""
        return np.array(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self):
        """Node coordinates as an (size, n) array in flat (C) order."""
        return self.mesh().reshape(self.n, -1).T

    @property
    def boundary_mask(self):
        mask = np.zeros(self.nx, dtype=bool)
        for a in range(self.n):
            idx = [slice(None)] * self.n
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = -1
            mask[tuple(idx)] = True
        return mask

    @property
    def interior_mask(self):
        return ~self.boundary_mask

    @property
    def boundary_nodes(self):
        return np.flatnonzero(self.boundary_mask.ravel())

    @property
    def interior_nodes(self):
        return np.flatnonzero(self.interior_mask.ravel())

    @property
    def gamma_faces(self):
        return [f for f in self.faces if f.label in self.gamma]

    @property
    def gamma_mask(self):
        """Boolean mask over boundary_nodes marking the accessible part."""
        on = np.zeros(self.size, dtype=bool)
        for f in self.gamma_faces:
            on[f.nodes] = True
        return on[self.boundary_nodes]

    @property
    def full_data(self):
        return len(self.gamma) == len(self.faces)

    def boundary_weights(self):
        """Surface quadrature weights per boundary node (faces summed)."""
        w = np.zeros(self.size)
        for f in self.faces:
            np.add.at(w, f.nodes, f.weights)
        return w[self.boundary_nodes]

    def time_weights(self):
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def space_weights(self):
        w = np.ones(())
        for d, m in zip(self.dx, self.nx):
            wa = np.full(m, d)
            wa[0] = wa[-1] = 0.5 * d
            w = np.multiply.outer(w, wa)
        return w

    def spec(self):
        return dict(n=self.n, box_lengths=list(self.box_lengths), T=self.T,
                    nx=list(self.nx), nt=self.nt, gamma=list(self.gamma))


FACE_LABELS = ("x{}-", "x{}+")


def _build_faces(n, nx, dx):
    flat = np.arange(int(np.prod(nx))).reshape(nx)
    faces = []
    for a in range(n):
        for side, lab in zip((-1, 1), FACE_LABELS):
            sl = [slice(None)] * n
            sl[a] = 0 if side < 0 else -1
            nodes = flat[tuple(sl)].ravel()
            sl[a] = 1 if side < 0 else -2
            inward = flat[tuple(sl)].ravel()
            sl[a] = 2 if side < 0 else -3
            inward2 = flat[tuple(sl)].ravel()
            w = np.ones(())
            open_ = np.ones((), dtype=bool)
            area = 1.0
            for j in range(n):
                if j == a:
                    continue
                wj = np.full(nx[j], dx[j])
                wj[0] = wj[-1] = 0.5 * dx[j]
                oj = np.ones(nx[j], dtype=bool)
                oj[0] = oj[-1] = False
                w = np.multiply.outer(w, wj)
                open_ = np.logical_and.outer(open_, oj)
                area *= dx[j]
            faces.append(Face(a, side, lab.format(a), nodes, inward, inward2,
                              np.asarray(w, float).ravel(), np.asarray(open_).ravel(), area))
    return tuple(faces)


def make_grid(n, box_lengths, T, nx, nt, gamma_spec="full"):
    """Uniform tensor grid over [0, L]^n x [0, T].

    gamma_spec is "full", "half-face" (the faces x_j = 0 only) or a list
    of face labels such as ["x0-", "x1+"].
    """
    n = int(n)
    if n not in (1, 2, 3):
        raise ValueError(f"spatial dimension must be 1, 2 or 3, got {n}")
    box_lengths = tuple(float(L) for L in np.broadcast_to(box_lengths, (n,)))
    nx = tuple(int(m) for m in np.broadcast_to(nx, (n,)))
    if any(L <= 0 for L in box_lengths):
        raise ValueError(f"box_lengths must be positive, got {box_lengths}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if any(m < 16 for m in nx):
        raise ValueError(f"nx must be at least 16 per axis, got {nx}")
    if int(nt) < 16:
        raise ValueError(f"nt must be at least 16, got {nt}")
    dx = tuple(L / (m - 1) for L, m in zip(box_lengths, nx))
    faces = _build_faces(n, nx, dx)
    labels = [f.label for f in faces]
    if gamma_spec in (None, "full"):
        gamma = tuple(labels)
    elif gamma_spec in ("half", "half-face"):
        gamma = tuple(l for l in labels if l.endswith("-"))
    else:
        gamma = tuple(gamma_spec)
        bad = [g for g in gamma if g not in labels]
        if bad or not gamma:
            raise ValueError(f"unknown face labels in gamma_spec: {bad or gamma_spec}")
    return SpaceTimeGrid(n, box_lengths, float(T), nx, int(nt), gamma, faces)


def grid_from_spec(spec):
    return make_grid(spec["n"], spec["box_lengths"], spec["T"], spec["nx"], spec["nt"],
                     spec.get("gamma", "full"))


# ---------------------------------------------------------------------------
# cutoffs

def _psi(z):
    z = np.asarray(z, float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos])
    return out


def smooth_step(z):
    """C-infinity step: 0 for z <= 0, 1 for z >= 1."""
    z = np.asarray(z, float)
    a, b = _psi(z), _psi(1.0 - z)
    return a / (a + b)


def time_plateau(t, T, h):
    """zeta: 1 on [2h, T-2h], 0 outside (h, T-h)."""
    t = np.asarray(t, float)
    return smooth_step((t - h) / h) * smooth_step((T - h - t) / h)


def time_bump(t, center, width):
    """iota: 1 for |t-center| <= width/2, 0 for |t-center| >= width."""
    return spatial_bump((np.asarray(t, float) - center) / width)


def spatial_bump(z):
    """chi: 1 for |z| <= 1/2, 0 for |z| >= 1."""
    return smooth_step(2.0 - 2.0 * np.abs(np.asarray(z, float)))


@dataclass(frozen=True)
class CutoffSpec:
    kind: str
    params: dict

    def __call__(self, s):
        p = self.params
        if self.kind == "time_plateau":
            return time_plateau(s, p["T"], p["h"])
        if self.kind == "time_bump":
            return time_bump(s, p["center"], p["width"])
        if self.kind == "spatial_bump":
            return spatial_bump(s)
        raise ValueError(f"unknown cutoff kind {self.kind!r}")


def collar_cutoff(grid, margin, width=None):
    """Spatial mask: 0 within `margin` of the boundary, 1 beyond margin + width."""
    width = margin if width is None else width
    X = grid.mesh()
    out = np.ones(grid.shape)
    for a, L in enumerate(grid.box_lengths):
        d = np.minimum(X[a], L - X[a])
        out = out * smooth_step((d - margin) / width)
    return out


# ---------------------------------------------------------------------------
# expression grammar

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("t", "x", "y", "z")
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
            ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
            ast.USub, ast.UAdd)


class Expression:
    """Closed-form expression in t, x, y, z built from + - * / ^ and sin cos exp tanh."""

    def __init__(self, source):
        self.source = str(source)
        tree = ast.parse(self.source.replace("^", "**"), mode="eval")
        names = set()
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ValueError(f"unsupported syntax in expression {self.source!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS \
                        or len(node.args) != 1 or node.keywords:
                    raise ValueError(f"unsupported call in expression {self.source!r}")
            elif isinstance(node, ast.Name):
                if node.id not in _FUNCS and node.id not in _CONSTS and node.id not in _VARS:
                    raise ValueError(f"unknown name {node.id!r} in expression {self.source!r}")
                names.add(node.id)
            elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ValueError(f"bad literal in expression {self.source!r}")
        self.names = names
        self._code = compile(tree, "<expr>", "eval")

    @property
    def time_dependent(self):
        return "t" in self.names

    def __call__(self, t, *x):
        env = dict(_FUNCS)
        env.update(_CONSTS)
        env["t"] = t
        for name, val in zip(_VARS[1:], x):
            env[name] = val
        for name in _VARS[1:]:
            env.setdefault(name, 0.0)
        return eval(self._code, {"__builtins__": {}}, env)

    def __repr__(self):
        return f"Expression({self.source!r})"


# ---------------------------------------------------------------------------
# coefficients

@dataclass(eq=False)
class CoefficientSet:
    """Sampled coefficients.  Spatial fields carry a leading time axis of
    length 1 (time independent) or nt+1."""
    grid: SpaceTimeGrid
    c: np.ndarray            # (nt+1,)
    A: np.ndarray            # (Ta, n, *nx)
    q: np.ndarray            # (Tq, *nx)
    B: dict                  # (sigma, beta) -> (Tb, *nx)
    support_margin: float
    c0: float
    div_A: Optional[np.ndarray] = None
    label: str = ""
    c_func: Optional[Callable] = field(default=None, repr=False)

    @property
    def static(self):
        """True when c, A and q do not depend on time."""
        return (np.ptp(self.c) == 0.0 and self.A.shape[0] == 1 and self.q.shape[0] == 1)

    @property
    def has_A(self):
        return bool(np.any(self.A))

    @property
    def nonlinear(self):
        return any(np.any(b) for b in self.B.values())

    def c_at(self, t):
        if self.c_func is not None:
            return np.asarray(self.c_func(np.asarray(t, float)), float) * np.ones_like(t, dtype=float)
        return np.interp(t, self.grid.t, self.c)

    def dc_at(self, t, h=1e-6):
        return (self.c_at(np.asarray(t) + h) - self.c_at(np.asarray(t) - h)) / (2 * h)

    def A_at(self, t):
        return _time_interp(self.A, self.grid, t)

    def q_at(self, t):
        return _time_interp(self.q, self.grid, t)

    def B_at(self, key, t):
        return _time_interp(self.B[key], self.grid, t)

    def max_order(self):
        return max((s + b for s, b in self.B), default=1)

    def replace(self, **kw):
        d = dict(grid=self.grid, c=self.c, A=self.A, q=self.q, B=self.B,
                 support_margin=self.support_margin, c0=self.c0, div_A=self.div_A,
                 label=self.label, c_func=self.c_func)
        d.update(kw)
        return CoefficientSet(**d)


def _time_interp(arr, grid, t):
    """Linear interpolation of a (T?, ...) array at time t."""
    if arr.shape[0] == 1:
        return arr[0]
    s = np.clip(t / grid.dt, 0, grid.nt)
    k = min(int(np.floor(s)), grid.nt - 1)
    w = s - k
    return (1 - w) * arr[k] + w * arr[k + 1]


def _as_callable(spec):
    if spec is None:
        return None
    if isinstance(spec, (int, float, np.floating, np.integer)):
        val = float(spec)
        return lambda t, *x: val
    if isinstance(spec, str):
        return Expression(spec)
    if callable(spec):
        return spec
    raise ValueError(f"cannot interpret coefficient spec {spec!r}")


def _sample(spec, grid):
    """Sample a scalar spec on the grid; returns (1 or nt+1, *nx) float array."""
    f = _as_callable(spec)
    X = grid.mesh()
    tdep = True
    if isinstance(f, Expression):
        tdep = f.time_dependent
    else:
        probe = [np.asarray(f(tt, *X), dtype=complex) * np.ones(grid.shape)
                 for tt in (0.0, 0.37 * grid.T, grid.T)]
        tdep = not (np.array_equal(probe[0], probe[1]) and np.array_equal(probe[0], probe[2]))
    ts = grid.t if tdep else np.array([0.0])
    out = np.empty((len(ts),) + grid.shape, dtype=complex)
    for k, tt in enumerate(ts):
        out[k] = np.asarray(f(tt, *X), dtype=complex) * np.ones(grid.shape)
    if np.max(np.abs(out.imag), initial=0.0) > 0:
        raise ValueError("coefficient samples must be real")
    out = out.real
    if not np.all(np.isfinite(out)):
        raise ValueError("coefficient samples must be finite")
    return out


def discrete_divergence(A, grid):
    """Centered-difference divergence of a vector field (..., n, *nx)."""
    A = np.asarray(A)
    lead = A.ndim - grid.n - 1
    out = 0.0
    for a in range(grid.n):
        out = out + np.gradient(A[(slice(None),) * lead + (a,)], grid.dx[a],
                                axis=lead + a, edge_order=2)
    return out


def _centered(f, h, axis):
    return np.gradient(f, h, axis=axis, edge_order=2)


def sample_coefficients(grid, c=1.0, A=None, q=None, B=None, stream=None,
                        support_margin=None, c0=None, div_A=None, mask=True,
                        div_tol=1e-8, label="", gauge=None):
    """Sample closed-form coefficient specs into a CoefficientSet.

    Each spec may be a number, an expression string or a callable f(t, *x).
    `stream` (n = 2) gives a divergence-free A = (d2 psi, -d1 psi) where the
    stream function is multiplied by the collar cutoff before differencing.
    `gauge` adds the centered gradient of a (collar-cut) potential phi to A.
    With mask=True, A, q and B are multiplied by the collar cutoff so they
    vanish on the collar.
    """
    if support_margin is None:
        support_margin = 0.15 * min(grid.box_lengths)
    if not support_margin > 0:
        raise ValueError("support_margin must be positive")
    kappa = collar_cutoff(grid, support_margin)
    # keep differenced quantities clear of the collar edge
    kappa_wide = collar_cutoff(grid, support_margin + 2 * max(grid.dx))

    cf = _as_callable(c)
    cs = np.asarray(cf(grid.t) if not isinstance(cf, Expression)
                    else cf(grid.t), dtype=complex) * np.ones(grid.nt + 1)
    if np.max(np.abs(cs.imag)) > 0:
        raise ValueError("c(t) must be real")
    cs = cs.real
    if c0 is None:
        c0 = 0.5 * float(cs.min())
    if not (c0 > 0 and np.all(cs >= c0)):
        raise ValueError(f"c(t) must satisfy c >= c0 > 0 (min c = {cs.min():.4g}, c0 = {c0})")

    n = grid.n
    if stream is not None:
        if A is not None:
            raise ValueError("give either A or stream, not both")
        if n != 2:
            raise ValueError("stream-function option needs n = 2")
        psi = _sample(stream, grid) * kappa_wide
        Avec = np.stack([_centered(psi, grid.dx[1], 2), -_centered(psi, grid.dx[0], 1)], axis=1)
    elif A is None:
        Avec = np.zeros((1, n) + grid.shape)
    else:
        if len(A) != n:
            raise ValueError(f"A needs {n} components")
        comps = [_sample(a, grid) for a in A]
        T = max(x.shape[0] for x in comps)
        Avec = np.stack([np.broadcast_to(x, (T,) + grid.shape) for x in comps], axis=1)
        if mask:
            Avec = Avec * kappa
    if gauge is not None:
        phi = _sample(gauge, grid) * kappa_wide
        Avec = Avec + np.stack([_centered(phi, grid.dx[j], j + 1) for j in range(n)], axis=1)
    qs = np.zeros((1,) + grid.shape) if q is None else _sample(q, grid)
    if mask and q is not None:
        qs = qs * kappa
    Bs = {}
    for key, spec in (B or {}).items():
        key = _parse_key(key)
        s, b = key
        if s < 1:
            raise ValueError(f"monomials need sigma >= 1, got {key}")
        if not 2 <= s + b <= 5:
            raise ValueError(f"monomial order must lie in [2, 5], got {key}")
        arr = _sample(spec, grid)
        Bs[key] = arr * kappa if mask else arr
    Avec = np.ascontiguousarray(Avec, dtype=float)
    if div_A is not None:
        dA = _sample(div_A, grid)
        err = np.max(np.abs(discrete_divergence(Avec, grid) - dA))
        if err > div_tol * max(1.0, np.max(np.abs(Avec))):
            raise ValueError(f"supplied div_A inconsistent with A (max error {err:.3g})")
        div_A = dA
    return CoefficientSet(grid, cs, Avec, qs, Bs, float(support_margin), float(c0),
                          div_A, label, c_func=cf if callable(cf) else None)


def _parse_key(key):
    if isinstance(key, str):
        s, b = (int(v) for v in key.replace("(", "").replace(")", "").split(","))
        return (s, b)
    return tuple(int(v) for v in key)


def coefficients_from_spec(grid, spec):
    """Build a CoefficientSet from a parsed configuration table."""
    spec = dict(spec or {})
    return sample_coefficients(
        grid, c=spec.get("c", 1.0), A=spec.get("A"), q=spec.get("q"),
        B=spec.get("B"), stream=spec.get("stream"),
        support_margin=spec.get("support_margin"), c0=spec.get("c0"),
        div_A=spec.get("div_A"), mask=spec.get("mask", True), label=spec.get("label", ""),
        gauge=spec.get("gauge"))


# ---------------------------------------------------------------------------
# quadrature

def _check_field(field, grid):
    field = np.asarray(field)
    if field.shape == grid.shape:
        return field[None], False
    if field.shape == (grid.nt + 1,) + grid.shape:
        return field, True
    raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")


def _grad(u, grid):
    return [np.gradient(u, grid.dx[a], axis=1 + a, edge_order=2) for a in range(grid.n)]


def discrete_norm(field, grid, kind="L2(Q)"):
    """Trapezoidal quadrature norms: L2(Q), L2(0,T;H1), H1(Q), sup.

    A single spatial slice is accepted for the L2 and sup kinds and gives
    the L2(Omega) norm.
    """
    u, spacetime = _check_field(field, grid)
    if kind == "sup":
        return float(np.max(np.abs(u)))
    ws = grid.space_weights()
    wt = grid.time_weights() if spacetime else np.ones(1)

    def integ(g):
        return float(np.tensordot(wt, np.tensordot(g, ws, axes=grid.n), axes=1))

    sq = np.abs(u) ** 2
    if kind in ("L2(Q)", "L2"):
        return math.sqrt(integ(sq))
    grads = _grad(u, grid)
    gsq = sum(np.abs(g) ** 2 for g in grads)
    if kind in ("L2(0,T;H1)", "L2H1"):
        return math.sqrt(integ(sq + gsq))
    if kind in ("H1(Q)", "H1"):
        if not spacetime:
            raise ValueError("H1(Q) needs a space-time field")
        ut = np.gradient(u, grid.dt, axis=0, edge_order=2)
        return math.sqrt(integ(sq + gsq + np.abs(ut) ** 2))
    raise ValueError(f"unknown norm kind {kind!r}")


def slice_norms(field, grid):
    """||u(t_k, .)||_{L2(Omega)} for every time level."""
    ws = grid.space_weights()
    u = np.asarray(field)
    return np.sqrt(np.tensordot(np.abs(u) ** 2, ws, axes=grid.n))


def pairing(u, v, grid, region="Q"):
    """Integral of u * conj(v) over Q, an Omega slice, or Sigma.

    On Sigma the arguments are traces of shape (nt+1, n_boundary_nodes).
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    prod = u * np.conj(v)
    if region == "Q":
        if u.shape != (grid.nt + 1,) + grid.shape:
            raise ValueError("Q pairing needs space-time fields")
        return complex(np.tensordot(grid.time_weights(),
                                    np.tensordot(prod, grid.space_weights(), axes=grid.n), axes=1))
    if region in ("Omega", "slice"):
        if u.shape != grid.shape:
            raise ValueError("Omega pairing needs spatial slices")
        return complex(np.tensordot(prod, grid.space_weights(), axes=grid.n))
    if region == "Sigma":
        if u.shape != (grid.nt + 1, grid.boundary_nodes.size):
            raise ValueError("Sigma pairing needs boundary traces")
        return complex(grid.time_weights() @ prod @ grid.boundary_weights())
    raise ValueError(f"unknown region {region!r}")


# ---------------------------------------------------------------------------
# traces

@dataclass(eq=False)
class BoundaryTrace:
    """Dirichlet data on the boundary nodes, shape (nt+1, n_boundary)."""
    values: np.ndarray
    grid: SpaceTimeGrid
    label: str = ""

    def vanish_order(self, end="start", tol=1e-12):
        """Number of leading time levels (counted from t = 0 or t = T) at which
        the trace vanishes; a discrete proxy for vanishing time derivatives."""
        v = self.values if end == "start" else self.values[::-1]
        scale = max(np.max(np.abs(v)), 1e-300)
        k = 0
        while k < len(v) and np.max(np.abs(v[k])) <= tol * scale:
            k += 1
        return k

    def __add__(self, other):
        return BoundaryTrace(self.values + other.values, self.grid)

    def __mul__(self, s):
        return BoundaryTrace(self.values * s, self.grid, self.label)

    __rmul__ = __mul__

    def norm(self):
        return math.sqrt(abs(pairing(self.values, self.values, self.grid, "Sigma")))


def trace_of(field, grid, label=""):
    u = np.asarray(field).reshape(grid.nt + 1, -1)
    return BoundaryTrace(u[:, grid.boundary_nodes].copy(), grid, label)


def zero_trace(grid):
    return BoundaryTrace(np.zeros((grid.nt + 1, grid.boundary_nodes.size), complex), grid)


# ---------------------------------------------------------------------------
# MSEARR container

def save_array(path, arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        dtype = "complex128"
        data = np.ascontiguousarray(arr, dtype="<c16").view("<f8")
    else:
        dtype = "float64"
        data = np.ascontiguousarray(arr, dtype="<f8")
    header = f"MSEARR v1 {dtype} {arr.ndim}" + "".join(f" {s}" for s in arr.shape) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def load_array(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[:2] != ["MSEARR", "v1"]:
            raise ValueError(f"{path}: not an MSEARR v1 file")
        dtype, ndim = header[2], int(header[3])
        shape = tuple(int(s) for s in header[4:4 + ndim])
        if len(shape) != ndim:
            raise ValueError(f"{path}: malformed header")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if dtype == "complex128":
        return raw.view("<c16").reshape(shape).astype(complex)
    if dtype == "float64":
        return raw.reshape(shape).astype(float)
    raise ValueError(f"{path}: unsupported dtype {dtype}")
