"""Command line front end: experiment manifests, dispatch and reports.

A manifest is a TOML file:

    scenario = "q_recovery"
    seed = 0
    [grid]       n, box_lengths, T, nx, nt, gamma
    [truth]      coefficient spec of the measured device
    [candidate]  coefficient spec of the known reference (optional)
    [sweep]      defaults shared by the stages (rho_list, K, J, M, ...)
    [[pipeline]] one table per stage: stage = "recover-q", plus overrides

run() writes report.csv (stage, item, metric, value, note; numbers rounded
to 12 significant digits), one MSEARR file per stage artifact and
provenance.txt.  Exit codes: 0 pass, 1 failed comparison, 2 validation
error, 3 numerical failure.
"""

import argparse
import csv
import io
import logging
import os
import platform
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import tomli
import tomli_w

from . import __version__
from .fields import (grid_from_spec, load_array, save_array, BoundaryTrace, discrete_norm,
                     discrete_divergence, coefficients_from_spec, time_bump)
from .go import GOProbe, ResolutionError, residual_audit
from .solver import NonConvergenceError, solve, flux_record, conservation_audit, relative_drift
from .workers import keyed_map, max_workers

log = logging.getLogger("mse")

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
COLUMNS = ("stage", "item", "metric", "value", "note")


class ManifestError(ValueError):
    """Schema violation; the message names the offending field."""


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.cause = exc


# ---------------------------------------------------------------------------
# manifests

GRID_KEYS = {"n": int, "box_lengths": list, "T": (int, float), "nx": list, "nt": int}


def load_manifest(path):
    """Parse a manifest file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists():
        name = p.name if p.suffix == ".toml" else p.name + ".toml"
        bundled = resources.files("mse") / "scenarios" / name
        if not bundled.is_file():
            raise ManifestError(f"manifest {path!s} not found")
        text = bundled.read_text()
    else:
        text = p.read_text()
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    return validate_manifest(data)


def validate_manifest(m):
    m = dict(m)
    if not isinstance(m.get("scenario", ""), str):
        raise ManifestError("scenario: must be a string")
    m.setdefault("scenario", "unnamed")
    seed = m.setdefault("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ManifestError("seed: must be a non-negative integer")
    pipe = m.setdefault("pipeline", [])
    if not isinstance(pipe, list):
        raise ManifestError("pipeline: must be an array of tables")
    for i, st in enumerate(pipe):
        if not isinstance(st, dict) or "stage" not in st:
            raise ManifestError(f"pipeline[{i}].stage: missing")
        if st["stage"] not in STAGES:
            raise ManifestError(f"pipeline[{i}].stage: unknown stage {st['stage']!r}")
    if pipe and not all(s["stage"] in GRIDLESS for s in pipe) or "grid" in m:
        g = m.get("grid")
        if not isinstance(g, dict):
            raise ManifestError("grid: missing table")
        for key, typ in GRID_KEYS.items():
            if key not in g:
                raise ManifestError(f"grid.{key}: missing")
            if not isinstance(g[key], typ) or isinstance(g[key], bool):
                raise ManifestError(f"grid.{key}: wrong type {type(g[key]).__name__}")
        try:
            grid_from_spec(g)
        except ValueError as exc:
            raise ManifestError(f"grid: {exc}") from None
    for key in ("truth", "candidate", "sweep"):
        if not isinstance(m.setdefault(key, {}), dict):
            raise ManifestError(f"{key}: must be a table")
    return m


def _random_bumps(spec, rng):
    """Expression string for a sum of Gaussian bumps with random centers."""
    count = int(spec.get("count", 3))
    amp = float(spec.get("amplitude", 1.0))
    width = float(spec.get("width", 0.1))
    lo, hi = spec.get("center_range", (0.35, 0.65))
    terms = []
    for _ in range(count):
        cx, cy = rng.uniform(lo, hi, 2)
        a = amp * rng.uniform(0.5, 1.0)
        terms.append(f"{a:.15g}*exp(-((x-{cx:.15g})^2+(y-{cy:.15g})^2)/(2*{width:.15g}^2))")
    return "+".join(terms)


def resolve_spec(spec, rng):
    """Coefficient spec with {random = ...} tables replaced by expressions."""
    out = {}
    for key, val in dict(spec).items():
        if isinstance(val, dict) and key != "B":
            out[key] = _random_bumps(val, rng) if val.get("random") else val
        elif key == "B":
            out[key] = {k: (_random_bumps(v, rng) if isinstance(v, dict) else v) for k, v in val.items()}
        else:
            out[key] = val
    return out


# ---------------------------------------------------------------------------
# reports

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0:
            return "0"
        return f"{v:.12g}"
    return str(v)


def write_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_report(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in COLUMNS[:4] if c not in (rd.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        return list(rd)


def _tolerance(tolerances, stage, metric):
    for key in (f"{stage}.{metric}", metric, "default"):
        if key in tolerances:
            return float(tolerances[key])
    return 0.0


def compare_reports(a, b, tolerances=None):
    """Row-by-row comparison keyed by (stage, item, metric).

    A numeric value passes when |a - b| <= tol * max(|a|, |b|); tol is looked
    up as "stage.metric", then "metric", then "default" (0).  With tol = 0
    the rounded values must agree exactly, so any change in the 12th digit
    fails.  Non-numeric values must match as strings.  Returns a list of
    dicts with a status field ("pass", "fail", "missing" or "extra").
    """
    tolerances = dict(tolerances or {})
    ra = read_report(a) if not isinstance(a, list) else a
    rb = read_report(b) if not isinstance(b, list) else b
    key = lambda r: (r["stage"], r["item"], r["metric"])
    da = {key(r): r["value"] for r in ra}
    db = {key(r): r["value"] for r in rb}
    out = []
    for k in sorted(set(da) | set(db)):
        stage, item, metric = k
        tol = _tolerance(tolerances, stage, metric)
        row = dict(stage=stage, item=item, metric=metric, a=da.get(k), b=db.get(k), tol=tol)
        if k not in db:
            row["status"] = "missing"
        elif k not in da:
            row["status"] = "extra"
        else:
            try:
                x, y = float(da[k]), float(db[k])
            except ValueError:
                ok = da[k] == db[k]
            else:
                if np.isnan(x) or np.isnan(y):
                    ok = np.isnan(x) and np.isnan(y)
                else:
                    ok = abs(x - y) <= tol * max(abs(x), abs(y))
            row["status"] = "pass" if ok else "fail"
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# stages

class Context:
    def __init__(self, manifest):
        self.manifest = manifest
        self.rng = np.random.default_rng(manifest["seed"])
        self.truth = resolve_spec(manifest["truth"], self.rng)
        self.candidate = resolve_spec(manifest["candidate"], self.rng)
        self.sweep = dict(manifest["sweep"])
        self.grid = grid_from_spec(manifest["grid"]) if "grid" in manifest else None

    def params(self, stage):
        p = dict(self.sweep)
        p.update({k: v for k, v in stage.items() if k != "stage"})
        return p

    def pair(self):
        from .reconstruct import DNOracle, OraclePair
        return OraclePair(DNOracle(self.truth, "truth"), DNOracle(self.candidate, "candidate"))

    def difference(self, name, grid=None):
        """truth - candidate for coefficient name on the base grid (static)."""
        g = grid or self.grid
        a = getattr(coefficients_from_spec(g, self.truth), name)
        b = getattr(coefficients_from_spec(g, self.candidate), name)
        return a - b


def _t_eval(p, T):
    k = int(p.get("n_eval", 9))
    return np.linspace(T / 4, 3 * T / 4, k)


def _over_times(arr, n_eval):
    arr = np.asarray(arr)
    if arr.shape[0] != 1:
        raise ManifestError("reference errors need time-independent truth coefficients")
    return np.broadcast_to(arr[0], (n_eval,) + arr.shape[1:])


def _probe_from(p, grid, coeffs=None):
    pr = dict(p.get("probe", {}))
    kind = pr.pop("kind", "nonlocal")
    rho = float(pr.pop("rho", 8.0))
    omega = np.asarray(pr.pop("omega", [1.0] + [0.0] * (grid.n - 1)), float)
    if kind == "nonlocal":
        omega = omega / np.linalg.norm(omega)
    for key in ("xi", "eta", "x0"):
        if key in pr:
            pr[key] = np.asarray(pr[key], float)
    return GOProbe(grid, rho, omega, kind=kind, coeffs=coeffs, **pr)


def stage_solve(ctx, p):
    co = coefficients_from_spec(ctx.grid, ctx.truth)
    probe = _probe_from(p, ctx.grid)
    u = solve(co, probe.trace(), nonlinear=bool(p.get("nonlinear", False)))
    rows = [("field", "norm_L2Q", discrete_norm(u, ctx.grid)),
            ("field", "max_abs", float(np.max(np.abs(u))))]
    return rows, {"field": u}


def stage_dnmap(ctx, p):
    co = coefficients_from_spec(ctx.grid, ctx.truth)
    probe = _probe_from(p, ctx.grid)
    rec = flux_record(co, probe.trace(), nonlinear=bool(p.get("nonlinear", False)))
    return [("record", "norm", rec.norm())], {"record": rec.values}


def stage_conservation(ctx, p):
    g = ctx.grid
    co = coefficients_from_spec(g, ctx.truth)
    probe = _probe_from(p, g)
    f = probe.trace()
    end = float(p.get("switch_off", 0.5)) * g.T
    cut = time_bump(g.t, 0.5 * end, 0.5 * end)
    f = BoundaryTrace(f.values * cut[:, None], g)
    u = solve(co, f)
    series = conservation_audit(u, g)
    start = int(np.searchsorted(g.t, end - 1e-12))
    return [("norm_series", "relative_drift", relative_drift(series, start))], {"norms": series}


def stage_residual(ctx, p):
    g = ctx.grid
    co = coefficients_from_spec(g, ctx.truth)
    rows = []
    for N in p.get("N_list", [0, 1]):
        probe = _probe_from(p, g, coeffs=co)
        window = p.get("window")
        rep = residual_audit(probe, co, p.get("rho_list", [8, 16, 32, 64]), N=int(N),
                             window=tuple(window) if window else None)
        rows.append((f"N={N}", "slope", rep["slope"]))
        rows += [(f"N={N}", f"residual_rho={r:g}", v) for r, v in zip(rep["rho"], rep["residual"])]
    return rows, {}


def stage_singular(ctx, p):
    from .reconstruct import singular_scaling_audit
    rows = []
    for n in p.get("n_list", [2, 3]):
        rep = singular_scaling_audit(int(n), nx=p.get("nx"), delta_exp=float(p.get("delta_exp", 0.0)))
        for variant, r in sorted(rep.items()):
            rows += [(f"n={n}:{variant}", "slope", r["slope"]),
                     (f"n={n}:{variant}", "in_bracket", bool(r["ok"]))]
    return rows, {}


def stage_freqdesign(ctx, p):
    from .freqdesign import design
    rows = []
    for m in p.get("m_list", [p.get("m", 3)]):
        bs = p.get("b_list", range(1, int(m) + 1)) if "b" not in p else [p["b"]]
        for b in bs:
            d = design(int(m), int(b))
            rows += [(f"m={m},b={b}", "certified", d.certified), (f"m={m},b={b}", "d_min", d.d_min)]
    return rows, {}


def stage_linearize(ctx, p):
    from .linearize import duality_mismatch
    g = ctx.grid
    c1 = coefficients_from_spec(g, ctx.truth)
    c2 = coefficients_from_spec(g, ctx.candidate)
    rho = float(p.get("rho", 8.0))
    dirs = p.get("omegas", [[1, 0], [0, 1], [0.6, 0.8]])
    fs = [GOProbe(g, rho, np.asarray(w, float) / np.linalg.norm(w), dispersion="discrete",
                  retarded=True).trace() for w in dirs[:-1]]
    g0 = GOProbe(g, rho, np.asarray(dirs[-1], float) / np.linalg.norm(dirs[-1]),
                 dispersion="discrete", retarded=True, direction="backward").trace()
    rep = duality_mismatch(c1, c2, fs, g0, eps0=float(p.get("eps0", 1e-2)))
    return [("identity", "boundary_abs", abs(rep["boundary"])),
            ("identity", "volume_abs", abs(rep["volume"])),
            ("identity", "mismatch", rep["mismatch"])], {}


def stage_recover_q(ctx, p):
    from .reconstruct import recover_q, relative_error
    g = ctx.grid
    te = _t_eval(p, g.T)
    field, S = recover_q(ctx.pair(), g, rho_list=tuple(p.get("rho_list", (24, 32, 48, 64))),
                         K=int(p.get("K", 4)), J=int(p.get("J", 6)), M=int(p.get("M", 16)),
                         t_eval=te, margin=float(p.get("margin", 0.15)))
    truth = _over_times(ctx.difference("q"), te.size)
    rows = [("q", "relative_error", relative_error(field, truth)),
            ("q", "fit_residual_max", float(np.nanmax(S.fit_residual)))]
    return rows, {"q": field, "lattice": S.values}


def stage_recover_A(ctx, p):
    from .reconstruct import recover_A, relative_error, measure_carriers, DNOracle, OraclePair
    g = ctx.grid
    te = _t_eval(p, g.T)
    pair = ctx.pair()
    rhos = tuple(p.get("rho_list", (24, 32, 48, 64)))
    K, J, M = int(p.get("K", 4)), int(p.get("J", 6)), int(p.get("M", 16))
    dA = ctx.difference("A")
    div_ref = discrete_divergence(dA, g)
    field, rep, S = recover_A(pair, g, rhos, K, J, M, t_eval=te, margin=float(p.get("margin", 0.15)),
                              iterations=int(p.get("iterations", 1)), reference_divergence=div_ref)
    truth = _over_times(dA, te.size)
    rows = [("A", "relative_error", relative_error(field, truth)),
            ("A", "constraint_residual", rep["constraint_residual"]),
            ("A", "divergence_defect", rep["divergence_defect"])]
    rows += [("A", f"update_{i + 1}", u) for i, u in enumerate(rep["update"])]
    if "gauge" in p:
        # gauge-shifted truth: same DN data, different divergence
        rho = float(p.get("control_rho", rhos[len(rhos) // 2]))
        spec2 = dict(ctx.truth, gauge=p["gauge"])
        pair2 = OraclePair(DNOracle(spec2, "gauge-shifted"), pair.candidate)
        div2 = discrete_divergence(coefficients_from_spec(g, spec2).A
                                   - coefficients_from_spec(g, ctx.candidate).A, g)
        car1 = measure_carriers(pair, g, [rho], J, M, K=K)
        car2 = measure_carriers(pair2, g, [rho], J, M, K=K)
        _, r1, _ = recover_A(pair, g, [rho], K, J, M, t_eval=te, carriers=car1,
                             iterations=0, reference_divergence=div_ref)
        _, r2, _ = recover_A(pair2, g, [rho], K, J, M, t_eval=te, carriers=car2,
                             iterations=0, reference_divergence=div2)
        e1, e2 = r1["constraint_residual"], r2["constraint_residual"]
        rows += [("gauge_control", "equal_divergence_residual", e1),
                 ("gauge_control", "shifted_residual", e2),
                 ("gauge_control", "ratio", e2 / max(e1, 1e-300))]
    return rows, {"A": field}


def _b_point(pair, g, sigma, beta, x0, kw):
    from .reconstruct import recover_B_point
    return recover_B_point(pair, g, sigma, beta, x0, **kw)


def stage_recover_B(ctx, p):
    from .reconstruct import cross_talk
    g = ctx.grid
    pair = ctx.pair()
    rows, est = [], []
    kw = dict(rho_list=tuple(p.get("rho_list", (12, 16, 20, 24))), delta=float(p.get("delta", 0.2)),
              eps0=float(p.get("eps0", 1e-2)), shape=p.get("shape", "packet"))
    monos = [tuple(mb) for mb in p.get("monomials", [[2, 0]])]
    points = [tuple(map(float, x)) for x in p.get("points", [[0.5] * g.n])]
    jobs = [((mi, pi), (pair, g, s, b, np.asarray(x0), kw))
            for mi, (s, b) in enumerate(monos) for pi, x0 in enumerate(points)]
    for (mi, pi), res in keyed_map(_b_point, jobs):
        s, b = monos[mi]
        x0 = points[pi]
        item = f"B{s}{b}@" + ",".join(f"{v:g}" for v in x0)
        truth = _b_truth(ctx, g, (s, b), x0)
        rows += [(item, "estimate", res.estimate), (item, "truth", truth),
                 (item, "relative_error", abs(res.estimate - truth) / abs(truth) if truth else float("nan"))]
        rows += [(item, f"ratio_rho={r:g}", complex(v).real) for r, v in zip(res.rhos, res.ratios)]
        est.append(res.estimate)
    if "cross_talk" in p:
        s, b = p["cross_talk"]
        ct = cross_talk(pair, g, int(s), int(b), np.asarray(points[0]), kw["rho_list"],
                        delta=kw["delta"], eps0=kw["eps0"], shape=kw["shape"])
        rows.append((f"B{s}{b}", "cross_talk_slope", ct["slope"]))
    return rows, {"estimates": np.array(est)}


def _b_truth(ctx, g, key, x0):
    tb = coefficients_from_spec(g, ctx.truth).B.get(key, 0.0)
    cb = coefficients_from_spec(g, ctx.candidate).B.get(key, 0.0)
    d = np.asarray(tb) - np.asarray(cb)
    if np.ndim(d) == 0:
        return float(d)
    idx = tuple(int(round(v / h)) for v, h in zip(x0, g.dx))
    return float(d[(0,) + idx])


def stage_recover_c(ctx, p):
    from .reconstruct import recover_c
    from .fields import _as_callable
    g = ctx.grid
    h = float(p.get("h", 0.1))
    # windows are t* +- 2h
    ts = np.asarray(p.get("t_samples", np.linspace(2 * h, g.T - 2 * h, 8)), float)
    kw = dict(h=h, bracket=tuple(p.get("bracket", (0.5, 2.0))))
    if "r" in p:
        kw["r"] = float(p["r"])
    ests = recover_c(ctx.truth, g, ts, candidate=ctx.candidate, **kw)
    cf = _as_callable(ctx.truth.get("c", 1.0))
    rows = []
    for e in ests:
        true = float(np.real(np.asarray(cf(np.array([e.t_star]))).ravel()[0])) if callable(cf) else float(cf)
        item = f"t={e.t_star:g}"
        rows += [(item, "estimate", e.c, "discrepancy-root estimator (constructive stand-in)"),
                 (item, "truth", true), (item, "relative_error", abs(e.c - true) / abs(true)),
                 (item, "slope_dc", e.slope_dc)]
    return rows, {"c": np.array([e.c for e in ests])}


STAGES = {
    "solve": stage_solve,
    "dnmap": stage_dnmap,
    "audit-conservation": stage_conservation,
    "audit-residual": stage_residual,
    "audit-singular": stage_singular,
    "freqdesign": stage_freqdesign,
    "linearize": stage_linearize,
    "recover-q": stage_recover_q,
    "recover-A": stage_recover_A,
    "recover-B": stage_recover_B,
    "recover-c": stage_recover_c,
}
GRIDLESS = {"audit-singular", "freqdesign"}


def _provenance(manifest):
    lines = [f"mse {__version__}",
             f"python {platform.python_version()} numpy {np.__version__} scipy {scipy.__version__}",
             f"MSE_WORKERS {os.environ.get('MSE_WORKERS', '(unset)')} -> {max_workers()}",
             "", "[manifest]", tomli_w.dumps(_plain(manifest))]
    return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run(manifest, out_dir=None):
    """Execute the pipeline of a manifest; returns the report directory."""
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    else:
        manifest = validate_manifest(manifest)
    out = Path(out_dir or manifest.get("output", f"report_{manifest['scenario']}"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "provenance.txt").write_text(_provenance(manifest))
    if not manifest["pipeline"]:
        return out
    ctx = Context(manifest)
    rows = []
    for i, st in enumerate(manifest["pipeline"]):
        name = st["stage"]
        log.info("stage %d: %s", i, name)
        try:
            srows, arrays = STAGES[name](ctx, ctx.params(st))
        except (ManifestError, NonConvergenceError, ResolutionError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        for r in srows:
            r = tuple(r) + ("",) * (5 - 1 - len(r))
            rows.append((name,) + r)
        for key, arr in arrays.items():
            save_array(out / f"{i:02d}_{name}_{key}.msearr", arr)
    write_report(out / "report.csv", rows)
    return out


# ---------------------------------------------------------------------------
# command line

def _read_config(path):
    with open(path, "rb") as fh:
        try:
            return tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from None


def _grid_and_coeffs(cfg):
    if "grid" not in cfg:
        raise ManifestError("grid: missing table")
    m = validate_manifest({"grid": cfg["grid"]})
    g = grid_from_spec(m["grid"])
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    return g, coefficients_from_spec(g, resolve_spec(cfg.get("coefficients", cfg.get("truth", {})), rng))


def _trace_from(cfg, g, path=None):
    if path:
        vals = load_array(path)
        if vals.shape != (g.nt + 1, g.boundary_nodes.size):
            raise ManifestError(f"trace {path}: shape {vals.shape} does not match the grid")
        return BoundaryTrace(vals, g)
    if "probe" not in cfg:
        raise ManifestError("probe: missing table (or pass --trace)")
    return _probe_from(cfg, g).trace()


def cmd_solve(a):
    cfg = _read_config(a.config)
    g, co = _grid_and_coeffs(cfg)
    u = solve(co, _trace_from(cfg, g, a.trace), nonlinear=bool(cfg.get("nonlinear", False)))
    save_array(a.out, u)
    return EXIT_OK


def cmd_dnmap(a):
    cfg = _read_config(a.config)
    g, co = _grid_and_coeffs(cfg)
    rec = flux_record(co, _trace_from(cfg, g, a.trace), nonlinear=bool(cfg.get("nonlinear", False)))
    save_array(a.out, rec.values)
    return EXIT_OK


def cmd_probe(a):
    if a.config:
        cfg = _read_config(a.config)
        g = grid_from_spec(validate_manifest({"grid": cfg["grid"]})["grid"])
    else:
        from .fields import make_grid
        g = make_grid(len(a.omega), (1.0,) * len(a.omega), 0.5, (65,) * len(a.omega), 32)
        from .reconstruct import probe_grid
        g = probe_grid(g, a.rho, float(np.linalg.norm(a.omega)))
    omega = np.asarray(a.omega, float)
    kw = dict(kind=a.kind, dispersion="discrete", retarded=True)
    if a.kind == "nonlocal":
        omega = omega / np.linalg.norm(omega)
    else:
        kw.update(x0=np.asarray(a.x0 or [0.5] * g.n, float), delta=a.delta)
    pr = GOProbe(g, a.rho, omega, **kw)
    save_array(a.out, pr.trace().values)
    meta = dict(kind=a.kind, rho=float(a.rho), omega=omega.tolist(), grid=_plain(g.spec()),
                dispersion="discrete", retarded=True)
    if a.kind == "local":
        meta.update(x0=kw["x0"].tolist(), delta=a.delta)
    Path(str(a.out) + ".toml").write_text(tomli_w.dumps(_plain(meta)))
    return EXIT_OK


def cmd_linearize(a):
    from .linearize import mixed_dn
    cfg = _read_config(a.config)
    g, co = _grid_and_coeffs(cfg)
    if len(a.traces) != a.order:
        raise ManifestError(f"--traces: expected {a.order} files, got {len(a.traces)}")
    traces = [_trace_from(cfg, g, p) for p in a.traces]
    rec = mixed_dn(co, traces, eps0=a.eps)
    if rec is None:
        raise ManifestError("coefficients: no nonlinear terms, mixed derivative vanishes")
    save_array(a.out, rec.values)
    return EXIT_OK


def cmd_freqdesign(a):
    from .freqdesign import design
    d = design(a.m, a.b)
    if a.certify and not d.certified:
        log.error("design (%d, %d) failed certification (d_min = %g)", a.m, a.b, d.d_min)
        return EXIT_NUMERICAL
    text = tomli_w.dumps(_plain(d.as_dict()))
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _recover_cmd(stage):
    def cmd(a):
        oracle = _read_config(a.oracle)
        scen = _read_config(a.scenario)
        man = dict(scen)
        man["truth"] = oracle.get("truth", oracle.get("coefficients", {}))
        if "grid" in oracle and "grid" not in man:
            man["grid"] = oracle["grid"]
        man["pipeline"] = [dict(stage=stage, **scen.get("stage", {}))]
        man.pop("stage", None)
        out = run(validate_manifest(man), a.out)
        _print_report(out / "report.csv")
        return EXIT_OK
    return cmd


def _audit_cmd(stage):
    def cmd(a):
        man = _read_config(a.config) if a.config else {}
        man = dict(man)
        man["pipeline"] = [dict(stage=stage, **man.pop("stage", {}))]
        out = run(validate_manifest(man), a.out)
        _print_report(out / "report.csv")
        return EXIT_OK
    return cmd


def _print_report(path):
    sys.stdout.write(Path(path).read_text())


def cmd_run(a):
    out = run(a.manifest, a.out)
    rep = out / "report.csv"
    if rep.exists():
        _print_report(rep)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_compare(a):
    tol = {}
    for item in a.tol or []:
        key, _, val = item.partition("=")
        if not val:
            raise ManifestError(f"--tol {item!r}: expected metric=value")
        tol[key] = float(val)
    rows = compare_reports(a.a, a.b, tol)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "item", "metric", "a", "b", "tol", "status"])
    for r in rows:
        w.writerow([r["stage"], r["item"], r["metric"], r["a"], r["b"], _fmt(r["tol"]), r["status"]])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK if all(r["status"] == "pass" for r in rows) else EXIT_FAIL


def build_parser():
    ap = argparse.ArgumentParser(prog="mse", description="magnetic Schroedinger inverse-problem lab")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="forward solve with Dirichlet data")
    s.add_argument("--config", required=True)
    s.add_argument("--trace")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("dnmap", help="flux DN record of a forward solve")
    s.add_argument("--config", required=True)
    s.add_argument("--trace")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_dnmap)

    s = sub.add_parser("probe", help="boundary trace of a geometric-optics probe")
    s.add_argument("--kind", choices=("nonlocal", "local"), default="nonlocal")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--omega", type=float, nargs="+", required=True)
    s.add_argument("--x0", type=float, nargs="+")
    s.add_argument("--delta", type=float, default=0.15)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_probe)

    s = sub.add_parser("linearize", help="mixed derivative of the nonlinear DN map")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--traces", nargs="+", required=True)
    s.add_argument("--eps", type=float, default=1e-2)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_linearize)

    s = sub.add_parser("freqdesign", help="certified frequency design")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--b", type=int, required=True)
    s.add_argument("--certify", action="store_true")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_freqdesign)

    for stage in ("recover-q", "recover-A", "recover-B", "recover-c"):
        s = sub.add_parser(stage, help=f"{stage} from simulated DN data")
        s.add_argument("--oracle", required=True)
        s.add_argument("--scenario", required=True)
        s.add_argument("--out", required=True)
        s.set_defaults(fn=_recover_cmd(stage))

    for stage in ("audit-conservation", "audit-residual", "audit-singular"):
        s = sub.add_parser(stage, help=f"{stage.split('-')[1]} audit")
        s.add_argument("--config")
        s.add_argument("--out", required=True)
        s.set_defaults(fn=_audit_cmd(stage))

    s = sub.add_parser("run", help="execute an experiment manifest")
    s.add_argument("manifest")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("compare", help="compare two reports")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--tol", action="append", metavar="METRIC=VALUE")
    s.set_defaults(fn=cmd_compare)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (NonConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except StageError as exc:
        log.error("%s", exc)
        numerical = isinstance(exc.cause, (NonConvergenceError, FloatingPointError,
                                           np.linalg.LinAlgError, ArithmeticError))
        return EXIT_NUMERICAL if numerical else EXIT_VALIDATION
    except (ValueError, KeyError, TypeError, OSError) as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
