"""Forward solve, DN record and two sanity checks: the norm stops moving once
the boundary data switch off, and a gauge transform leaves the record alone."""
import numpy as np

from mse.fields import BoundaryTrace, make_grid, sample_coefficients, time_bump, trace_of
from mse.go import GOProbe
from mse.solver import conservation_audit, flux_record, relative_drift, solve

T = 0.5
g = make_grid(2, (1, 1), T, (65, 65), 256)
co = sample_coefficients(g, stream="0.1*exp(-((x-0.5)^2+(y-0.5)^2)/0.02)",
                         q="3*exp(-((x-0.5)^2+(y-0.45)^2)/0.03)")

# plane-wave probe, switched off at T/2
f = GOProbe(g, 8.0, np.array([0.6, 0.8]), dispersion="discrete", retarded=True).trace()
f = BoundaryTrace(f.values * time_bump(g.t, T / 4, T / 4)[:, None], g)
u = solve(co, f)
norms = conservation_audit(u, g)
k = np.searchsorted(g.t, T / 2)
print("norm at T/2   %.12f" % norms[k])
print("drift after   %.2e" % relative_drift(norms, k))

# gauge transform by phi = s(t) exp(-r^2/0.01)
X, Y = g.mesh()
tt = g.t[:, None, None]
bump = np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.01)
s = np.sin(np.pi * tt / T) ** 2
grad = np.stack([-2 * (X - 0.5) * s * bump, -2 * (Y - 0.5) * s * bump], 1) / 0.01
co2 = co.replace(A=co.A + grad, q=co.q - np.pi / T * np.sin(2 * np.pi * tt / T) * bump)

h = trace_of(s * np.exp(1j * (5 * X - 3 * Y)), g)
r1, r2 = flux_record(co, h), flux_record(co2, h)
print("gauge change  %.2e" % ((r1 - r2).norm() / r1.norm()))
