"""Certified frequency designs and the second-order boundary/volume identity."""
import numpy as np

from mse.fields import make_grid, sample_coefficients
from mse.freqdesign import design
from mse.go import GOProbe
from mse.linearize import duality_mismatch
from mse.reconstruct import probe_grid

for m in range(2, 6):
    for b in range(1, m + 1):
        d = design(m, b)
        print(f"m={m} b={b} d_min={d.d_min:.4f} certified={d.certified}")
print("(3,2) vectors:", design(3, 2).vectors.tolist())

# B20 on a bump: mixed DN data against the volume term
g = probe_grid(make_grid(2, (1, 1), 0.5, (65, 65), 32), 16.0, 1.0)
q = "3*exp(-((x-0.5)^2+(y-0.45)^2)/0.02)"
c1 = sample_coefficients(g, q=q, B={"2,0": "20*exp(-((x-0.5)^2+(y-0.5)^2)/0.03)"})
c2 = sample_coefficients(g, q=q)
fs = [GOProbe(g, 16.0, np.array(w, float), dispersion="discrete", retarded=True).trace()
      for w in ([1, 0], [0, 1])]
g0 = GOProbe(g, 16.0, np.array([0.6, 0.8]), dispersion="discrete", retarded=True,
             direction="backward").trace()
rep = duality_mismatch(c1, c2, fs, g0, eps0=1e-2)
print("boundary side ", rep["boundary"])
print("volume side   ", rep["volume"])
print("mismatch       %.2e" % rep["mismatch"])
