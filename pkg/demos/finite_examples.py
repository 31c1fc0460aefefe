"""Run the bundled finite-system fixtures and show the closed loop that
goes wrong under measurement errors.

    python3 demos/finite_examples.py
"""
from importlib.resources import files

from symctrl.relations import Relation, parse_fixture, run_fixture_checks
from symctrl.runtime import finite_closed_loop_traces

for name in ("state_information", "static_refinement", "robustness"):
    fx = parse_fixture((files("symctrl") / "fixtures" / f"{name}.txt").read_text())
    for check, result in run_fixture_checks(fx):
        print(f"{name}: {' '.join(check)} -> {result!r}")

fx = parse_fixture((files("symctrl") / "fixtures" / "robustness.txt").read_text())
S1, P2, C = fx.systems["S1"], fx.relations["P2"], fx.relations["C"]
print("\nclosed loop with exact measurements:")
for tr in sorted(finite_closed_loop_traces(S1, C, Relation.identity(S1.n_states), 3, [0])):
    print("  ", tr)
print("closed loop with the measurement relation P2:")
for tr in sorted(finite_closed_loop_traces(S1, C, P2, 3, [0])):
    print("  ", tr)
