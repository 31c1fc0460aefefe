"""Abstract, solve and simulate the vehicle maze problem, then print a
coarse ASCII picture of the first closed-loop run.

    python3 demos/vehicle_maze.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from symctrl.cli import main
from symctrl.problem import read_problem

out = Path(sys.argv[1] if len(sys.argv) > 1 else "vehicle_out")
for cmd in ("abstract", "synthesize", "simulate"):
    code = main([cmd, "--problem", "vehicle", "--out", str(out)])
    if code:
        sys.exit(code)

problem = read_problem("vehicle")
rows = [ln.split(",") for ln in (out / "traces" / "run_000.csv").read_text().splitlines()
        if not ln.startswith(("t,", "#"))]
xy = np.array([[float(r[1]), float(r[2])] for r in rows])

W, H = 50, 25
canvas = [[" "] * W for _ in range(H)]


def plot(x, y, ch):
    i, j = int(H - 1 - y / 10 * (H - 1)), int(x / 10 * (W - 1))
    if 0 <= i < H and 0 <= j < W:
        canvas[i][j] = ch


for gx in np.linspace(0, 10, 201):
    for gy in np.linspace(0, 10, 201):
        p = np.array([[gx, gy, 0.0]])
        if problem.spec.avoid.contains(p)[0]:
            plot(gx, gy, "#")
        elif any(t.contains(p)[0] for t in problem.spec.targets):
            plot(gx, gy, "T")
for x, y in xy:
    plot(x, y, ".")
print("\n".join("".join(r) for r in canvas))
