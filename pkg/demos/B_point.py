"""One pointwise value of a quadratic nonlinearity (B20 = 0.7 on a ball)."""
import numpy as np

from mse.fields import make_grid
from mse.reconstruct import DNOracle, OraclePair, recover_B_point

ball = "0.35*(1-tanh((((x-0.5)^2+(y-0.5)^2)^0.5-0.27)/0.02))"
base = make_grid(2, (1, 1), 0.5, (65, 65), 32)
pair = OraclePair(DNOracle(dict(B={"2,0": ball}), "truth"), DNOracle({}, "reference"))

res = recover_B_point(pair, base, 2, 0, (0.5, 0.5), rho_list=(12, 16, 20, 24))
for rho, r in zip(res.rhos, res.ratios):
    print(f"rho={rho:>4}  ratio {np.real(r):.4f}")
print(f"extrapolated {res.estimate:.4f}  (truth 0.7)")
