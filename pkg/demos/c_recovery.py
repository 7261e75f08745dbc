"""Leading coefficient c(t) from singular probes, one root solve per time."""
import numpy as np

from mse.fields import make_grid
from mse.reconstruct import recover_c

base = make_grid(2, (1, 1), 1.0, (65, 65), 256)
for e in recover_c(dict(c="1+0.2*sin(pi*t)"), base, np.linspace(0.2, 0.8, 5)):
    true = 1 + 0.2 * np.sin(np.pi * e.t_star)
    print(f"t={e.t_star:.2f}  c={e.c:.5f}  true={true:.5f}  err={abs(e.c - true) / true:.2%}")
