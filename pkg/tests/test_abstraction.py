import itertools

import numpy as np
import pytest

from symctrl.abstraction import AbstractionSpec, check_canonicity_sample, compute_transitions
from symctrl.core import HyperInterval, UniformGridCover
from symctrl.odeint import SamplingConfig, simulate_perturbed
from symctrl.plants import VEHICLE, affine_plant
from symctrl.problem import read_problem
from symctrl.synthesis import solve_reach_avoid, solve_safety

PI = np.pi


def scan_cells(grid, lb, ub):
    """Cells whose closed extent meets [lb, ub]; non-periodic grids only."""
    clb, cub = grid.cell_bounds()
    return set(np.flatnonzero(np.all((clb <= ub) & (lb <= cub), axis=1)).tolist())


def affine_spec(A, B, grid, inputs, w, tau, substeps=5, **kw):
    p = affine_plant(A, B)
    return AbstractionSpec(grid, inputs, p.vf, p.lipschitz, w, SamplingConfig(tau, substeps), **kw)


def test_zero_field_successors_are_the_cell_neighbourhood():
    g = UniformGridCover([0.5, 0.5], [1, 1], [4, 3])
    S = compute_transitions(affine_spec(np.zeros((2, 2)), np.zeros((2, 1)), g, [[0.0]], [0, 0], 1.0))
    assert not S.blocked.any() and not S.overflow.any()
    lb, ub = g.cell_bounds()
    for x in range(g.n_cells):
        assert set(S.successors(x, 0).tolist()) == scan_cells(g, lb[x], ub[x])


def test_zero_field_canonicity_report():
    g = UniformGridCover([0.5, 0.5], [1, 1], [4, 3])
    spec = affine_spec(np.zeros((2, 2)), np.zeros((2, 1)), g, [[0.0]], [0, 0], 1.0)
    rep = check_canonicity_sample(spec, compute_transitions(spec), 1200)
    assert rep.violations == 0 and rep.tightness == 1.0


def test_unit_drift_shifts_by_one_cell():
    g = UniformGridCover([0.5], [1.0], [6])
    # one RK4 step keeps the shifted faces exactly representable
    spec = affine_spec([[0.0]], [[1.0]], g, [[1.0]], [0.0], 1.0, substeps=1)
    S = compute_transitions(spec)
    lb, ub = g.cell_bounds()
    for x in range(5):
        assert set(S.successors(x, 0).tolist()) == scan_cells(g, lb[x] + 1, ub[x] + 1)
        assert S.overflow[x, 0] == 0
    # the last cell is pushed past the upper edge
    assert S.overflow[5, 0] == 1 and not S.blocked[5, 0]
    blocked = compute_transitions(affine_spec([[0.0]], [[1.0]], g, [[1.0]], [0.0], 1.0, 1,
                                              overflow_policy="block"))
    assert blocked.blocked[5, 0] and not blocked.blocked[:5, 0].any()


def test_inflated_cells_widen_successors():
    g = UniformGridCover([0.5], [1.0], [6], inflation=[0.1])
    S = compute_transitions(affine_spec([[0.0]], [[1.0]], g, [[1.0]], [0.0], 1.0))
    for x in range(4):
        assert set(S.successors(x, 0).tolist()) == {x, x + 1, x + 2}


def certify(spec, sys, per_axis, rng, signals=8):
    """Every simulated concrete transition from a fine lattice of initial
    points (faces and corners included) is reproduced by the abstraction."""
    g = spec.grid
    axes = [np.linspace(g.edge[i], g.edge[i] + g.counts[i] * g.eta[i], per_axis * g.counts[i] + 1)
            for i in range(g.dim)]
    pts = np.array(list(itertools.product(*axes)))
    lb, ub = g.cell_bounds()
    top = g.edge + g.counts * g.eta
    checked = 0
    for j, u in enumerate(spec.inputs):
        starts = np.repeat(pts, signals, axis=0)
        ends = simulate_perturbed(spec.vf, starts, u, spec.cfg.tau, rng, w=spec.w, bang_fraction=0.75)
        for x0, x1 in zip(starts, ends):
            sources = np.flatnonzero(np.all((lb <= x0) & (x0 <= ub), axis=1))
            outside = np.any(x1 < g.edge) or np.any(x1 > top)
            targets = np.flatnonzero(np.all((lb <= x1) & (x1 <= ub), axis=1))
            for s in sources:
                if sys.blocked[s, j]:
                    continue
                succ = set(sys.successors(int(s), j).tolist())
                assert set(targets.tolist()) <= succ
                if outside:
                    assert sys.overflow[s, j] > 0
                checked += 1
    return checked


def test_frr_certificate_1d():
    rng = np.random.default_rng(10)
    g = UniformGridCover([0.25], [0.5], [8])
    spec = affine_spec([[-1.0]], [[1.0]], g, [[-1.0], [0.0], [1.5]], [0.05], 0.4)
    assert certify(spec, compute_transitions(spec), 25, rng) > 1000


def test_frr_certificate_2d():
    rng = np.random.default_rng(11)
    g = UniformGridCover([-2.5, -2.5], [1.0, 1.0], [6, 6])
    A = [[0.0, 1.0], [-1.0, -0.2]]
    spec = affine_spec(A, np.eye(2), g, [[0.0, 0.0], [0.5, -0.5]], [0.02, 0.02], 0.5)
    assert certify(spec, compute_transitions(spec), 6, rng, signals=3) > 1000


def test_admissibility_excludes_nonfinite_flows():
    g = UniformGridCover([0.5], [1.0], [6])

    def vf(x, u):
        # undefined to the right of x = 3.5
        return np.where(x > 3.5, np.nan, 0.0 * x + 1.0)

    spec = AbstractionSpec(g, [[0.0]], vf, lambda u: np.zeros((1, 1)), [0.0], SamplingConfig(0.5))
    S = compute_transitions(spec)
    assert S.blocked[:, 0].tolist() == [False, False, False, True, True, True]
    # sampled: no admissible pair starts a non-finite concrete flow
    rng = np.random.default_rng(0)
    for x in np.flatnonzero(~S.blocked[:, 0]):
        c = g.center(int(x))
        ends = simulate_perturbed(vf, c + rng.uniform(-0.5, 0.5, (50, 1)), [0.0], 0.5, rng)
        assert np.all(np.isfinite(ends))


def small_vehicle(first_theta=-34 * PI / 35):
    g = UniformGridCover([0.2, 0.2, first_theta], [0.4, 0.4, 2 * PI / 35], [8, 8, 35],
                         [False, False, True])
    inputs = np.array(list(itertools.product([-1.0, 1.0], [-1.0, 0.0, 1.0])))
    return AbstractionSpec(g, inputs, VEHICLE.vf, VEHICLE.lipschitz, np.zeros(3), SamplingConfig(0.3))


def test_periodic_translation_of_the_table():
    base = compute_transitions(small_vehicle())
    shifted = compute_transitions(small_vehicle(-34 * PI / 35 + 2 * PI))
    assert np.array_equal(base.blocked, shifted.blocked)
    assert np.array_equal(base.lo, shifted.lo) and np.array_equal(base.hi, shifted.hi)
    assert np.array_equal(base.overflow, shifted.overflow)


def test_successor_boxes_wrap_the_angle():
    S = compute_transitions(small_vehicle())
    g = S.grid
    ids = np.flatnonzero(~S.blocked[:, 0])
    assert np.any(S.lo[ids, 0, 2] > S.hi[ids, 0, 2])
    for x in ids[:200]:
        th = g.decode(S.successors(int(x), 0))[:, 2]
        assert len(set(th.tolist())) <= 6


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_the_table(workers, monkeypatch):
    import symctrl.abstraction as ab
    monkeypatch.setattr(ab, "CHUNK", 257)
    spec = small_vehicle()
    a = compute_transitions(spec, workers=1)
    b = compute_transitions(spec, workers=workers)
    c = compute_transitions(spec, workers=1)
    for f in ("blocked", "lo", "hi", "overflow"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
        assert np.array_equal(getattr(a, f), getattr(c, f))


def test_vehicle_canonicity_sample():
    spec = read_problem("vehicle").abstraction_spec()
    S = compute_transitions(spec)
    rep = check_canonicity_sample(spec, S, 10 ** 4, np.random.default_rng(1))
    assert rep.samples >= 10 ** 4 and rep.violations == 0 and rep.inadmissible == 0
    assert 0 < rep.tightness <= 1
    half = read_problem("vehicle").abstraction_spec(beta_scale=0.5)
    rep_half = check_canonicity_sample(half, compute_transitions(half), 10 ** 4, np.random.default_rng(1))
    assert rep_half.violations > 0


def test_subdivision_tightens_and_stays_sound():
    spec = small_vehicle()
    fine = small_vehicle()
    fine.subdivision = np.array([2, 2, 1])
    S, T = compute_transitions(spec), compute_transitions(fine)
    assert T.transition_count() <= S.transition_count()
    rep = check_canonicity_sample(fine, T, 3000, np.random.default_rng(2))
    assert rep.violations == 0


def test_avoid_and_overflow_policies_agree_on_winning_sets():
    g = UniformGridCover([0.25, 0.25], [0.5, 0.5], [12, 12])
    A = [[0.0, 0.3], [-0.3, 0.0]]
    inputs = [[a, b] for a in (-1.0, 0.0, 1.0) for b in (-1.0, 0.0, 1.0)]
    lb, ub = g.cell_bounds()
    avoid = np.zeros(g.n_cells, dtype=bool)
    for box in (HyperInterval([2.0, 1.0], [2.6, 4.5]), HyperInterval([3.5, 3.0], [5.0, 3.4])):
        avoid |= np.all((lb <= box.ub) & (box.lb <= ub), axis=1)
    target = np.all((lb >= [5.0, 5.0]) & (ub <= [6.0, 6.0]), axis=1)
    results = []
    for op, ap in itertools.product(("keep", "block"), ("source", "touch")):
        spec = affine_spec(A, np.eye(2), g, inputs, [0.01, 0.01], 0.3, blocked_cells=avoid,
                           overflow_policy=op, avoid_policy=ap)
        S = compute_transitions(spec)
        assert S.blocked[avoid].all()
        if ap == "touch":
            for x, u in np.argwhere(~S.blocked):
                assert not avoid[S.successors(int(x), int(u))].any()
        if op == "block":
            assert not S.overflow.any()
        W, _, rank = solve_reach_avoid(S, target, avoid)
        Z, _ = solve_safety(S, ~avoid)
        results.append((W.member, rank, Z.member, S.transition_count()))
    for r in results[1:]:
        assert np.array_equal(r[0], results[0][0]) and np.array_equal(r[1], results[0][1])
        assert np.array_equal(r[2], results[0][2])
    # the permissive policy stores the most transitions
    assert results[0][3] == max(r[3] for r in results)


def test_spec_validation():
    g = UniformGridCover([0.5], [1.0], [3])
    with pytest.raises(ValueError):
        affine_spec([[0.0]], [[1.0]], g, [[0.0]], [0.0], 1.0, overflow_policy="drop")
    with pytest.raises(ValueError):
        affine_spec([[0.0]], [[1.0]], g, [[0.0]], [0.0], 1.0, blocked_cells=np.zeros(2, dtype=bool))
    with pytest.raises(ValueError):
        affine_spec([[0.0]], [[1.0]], g, [[0.0]], [0.0], 1.0, subdivision=[0])
