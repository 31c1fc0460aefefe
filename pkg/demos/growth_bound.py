"""Compare the vehicle growth bound with the spread of sampled perturbed
trajectories from one cell.

    python3 demos/growth_bound.py
"""
import numpy as np

from symctrl.odeint import growth_radius, simulate_perturbed
from symctrl.problem import read_problem

problem = read_problem("vehicle")
g, plant, cfg = problem.grid, problem.plant, problem.cfg
rng = np.random.default_rng(0)
cell = g.cell_of_point(np.array([5.0, 5.0, 0.5]))
lb, ub = g.cell_bounds(np.array([cell]))
p = g.center(cell)
for u in ([0.9, 0.0], [0.9, 0.9], [-0.6, 0.3]):
    x0 = lb + rng.random((5000, 3)) * (ub - lb)
    nominal = simulate_perturbed(plant.vf, p, u, cfg.tau, rng)[0]
    xi = simulate_perturbed(plant.vf, x0, u, cfg.tau, rng)
    beta = growth_radius(plant.lipschitz, problem.w, g.radius, u, cfg)
    spread = np.abs(xi - nominal).max(axis=0)
    print(f"u={u}: max spread {np.round(spread, 5)}  bound {np.round(beta, 5)}")
