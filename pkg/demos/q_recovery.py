"""Electric potential from boundary data, through the manifest runner.

The bundled scenario is 129^2 with rho up to 64 (about 25 min on one core);
pass --small for a 65^2 run with a coarser rho list.
"""
import sys

from mse import cli

m = cli.load_manifest("scenario_q_recovery")
if "--small" in sys.argv:
    m["grid"]["nx"] = [65, 65]
    m["sweep"]["rho_list"] = [20, 24, 28, 32]
out = cli.run(m, "report_q_demo")
print((out / "report.csv").read_text())
