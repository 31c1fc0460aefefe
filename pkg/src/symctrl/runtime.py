"""Refined controllers in the perturbed closed loop.

The refined controller is the lookup table composed with the static
quantizer; its only memory is the active target index.  Simulations use
RK4 with piecewise-constant disturbances, so a satisfied trace is evidence
for the closed-loop guarantee, not a proof of it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import REACH_AVOID, RECURRENCE, ControlProblem
from .odeint import simulate_perturbed
from .synthesis import Controller

LIVE = "Live"
BLOCKED_PLANT = "BlockedPlant"
OUTSIDE_DOMAIN = "OutsideDomain"
TARGET_REACHED = "TargetReached"


class OutsideDomainError(RuntimeError):
    def __init__(self, cell, target):
        super().__init__(f"measured cell {cell} is outside the controller domain (target {target})")
        self.cell = cell
        self.target = target


@dataclass
class PerturbationConfig:
    """Input disturbance ``P1(u) = (u + [-p1, p1]) & U`` and measurement
    error ``P2(x) = x + [-p2, p2]``.  The output maps are identities."""

    p1: np.ndarray | None = None
    p2: np.ndarray | None = None
    input_bounds: tuple | None = None
    bang_fraction: float = 0.5   # share of samples drawn at the box vertices

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if v is not None:
                v = np.atleast_1d(np.asarray(v, dtype=float))
                if np.any(v < 0) or not np.all(np.isfinite(v)):
                    raise ValueError(f"{name} must be finite and nonnegative")
                setattr(self, name, v)
        if self.input_bounds is not None:
            lb, ub = (np.asarray(b, dtype=float) for b in self.input_bounds)
            self.input_bounds = (lb, ub)

    def validate(self, grid):
        """The measurement error must be covered by the cell inflation."""
        if self.p2 is None:
            return
        if self.p2.shape != grid.inflation.shape:
            raise ValueError("p2 has the wrong dimension")
        if np.any(self.p2 > grid.inflation * (1 + 1e-12)):
            raise ValueError("measurement error exceeds the cell inflation used for abstraction")

    def _sample(self, radius, rng):
        s = rng.uniform(-1.0, 1.0, size=radius.shape)
        if rng.random() < self.bang_fraction:
            s = np.sign(s)
        return s * radius

    def measure(self, x, rng):
        if self.p2 is None:
            return np.array(x, dtype=float)
        return x + self._sample(self.p2, rng)

    def perturb_input(self, u, rng):
        if self.p1 is None:
            return np.array(u, dtype=float)
        lo, hi = u - self.p1, u + self.p1
        if self.input_bounds is not None:
            lo = np.maximum(lo, self.input_bounds[0])
            hi = np.minimum(hi, self.input_bounds[1])
        mid, rad = (lo + hi) / 2, (hi - lo) / 2
        return mid + self._sample(rad, rng)


@dataclass
class StepInfo:
    cell: int
    measured: np.ndarray
    input_id: int
    target: int


def refined_step(ctrl: Controller, x, pert: PerturbationConfig, rng, target: int = 0,
                 select: str = "lowest"):
    """One evaluation of the refined controller at the true state ``x``.

    Samples a measurement, quantizes it and picks an admissible input of
    the active target: the lowest id, or a uniformly random one when
    ``select == "random"``.
    """
    xm = pert.measure(np.asarray(x, dtype=float), rng)
    cell = ctrl.grid.cell_of_point(xm)
    if not ctrl.in_domain(cell, target):
        raise OutsideDomainError(cell, target)
    ids = ctrl.inputs_at(cell, target)
    if ids.size == 0:
        raise OutsideDomainError(cell, target)
    uid = int(ids[0]) if select == "lowest" else int(rng.choice(ids))
    return ctrl.inputs[uid].copy(), StepInfo(cell, xm, uid, target)


@dataclass
class TraceRecord:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)          # one more than the steps
    measured_states: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    commanded_inputs: list = field(default_factory=list)
    applied_inputs: list = field(default_factory=list)
    active_target_index: list = field(default_factory=list)
    termination: str = LIVE

    @property
    def steps(self) -> int:
        return len(self.commanded_inputs)

    def to_csv(self) -> str:
        n = len(self.states[0])
        m = len(self.commanded_inputs[0]) if self.commanded_inputs else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"xm{i + 1}" for i in range(n)]
                   + [f"u{j + 1}" for j in range(m)] + [f"ua{j + 1}" for j in range(m)]
                   + ["cell_id", "target_idx"])
        fmt = lambda v: repr(float(v))
        for k in range(self.steps):
            w.writerow([fmt(self.times[k])] + [fmt(v) for v in self.states[k]]
                       + [fmt(v) for v in self.measured_states[k]]
                       + [fmt(v) for v in self.commanded_inputs[k]]
                       + [fmt(v) for v in self.applied_inputs[k]]
                       + [self.cells[k], self.active_target_index[k]])
        if len(self.times) > self.steps:
            last = len(self.states) - 1
            w.writerow([fmt(self.times[last])] + [fmt(v) for v in self.states[last]]
                       + [""] * (n + 2 * m + 2))
        buf.write(f"# termination={self.termination}\n")
        return buf.getvalue()


def simulate(ctrl: Controller, vf, pert: PerturbationConfig, x0, steps: int, rng,
             disturbance_w=None, *, tau: float, substeps: int = 5, target: int = 0,
             select: str = "lowest") -> TraceRecord:
    """Perturbed closed loop from ``x0`` for at most ``steps`` sampling periods.

    Reach-avoid runs stop with ``TargetReached`` once the measured cell lies
    in the target layer.  The additive disturbance is resampled every
    ``tau / substeps``; the perturbed input is held over each period.
    """
    pert.validate(ctrl.grid)
    x = np.array(x0, dtype=float)
    n = x.size
    w = np.zeros(n) if disturbance_w is None else np.asarray(disturbance_w, dtype=float)
    tr = TraceRecord(times=[0.0], states=[x.copy()])
    for k in range(steps):
        try:
            u, info = refined_step(ctrl, x, pert, rng, target, select)
        except OutsideDomainError as e:
            if ctrl.kind == REACH_AVOID and e.cell >= 0 and ctrl.in_domain(e.cell, target) \
                    and ctrl.rank(e.cell, target) == 0:
                tr.termination = TARGET_REACHED
            else:
                tr.termination = OUTSIDE_DOMAIN
            return tr
        if ctrl.kind == REACH_AVOID and ctrl.rank(info.cell, target) == 0:
            tr.termination = TARGET_REACHED
            return tr
        ua = pert.perturb_input(u, rng)
        xn = simulate_perturbed(vf, x[None, :], ua, tau, rng, w=w, segments=substeps,
                                steps_per_segment=1, bang_fraction=0.5)[0]
        tr.measured_states.append(info.measured)
        tr.cells.append(info.cell)
        tr.commanded_inputs.append(u)
        tr.applied_inputs.append(ua)
        tr.active_target_index.append(info.target)
        target = ctrl.next_target(info.cell, target)
        if not np.all(np.isfinite(xn)):
            tr.termination = BLOCKED_PLANT
            return tr
        x = xn
        tr.times.append((k + 1) * tau)
        tr.states.append(x.copy())
    return tr


@dataclass(frozen=True)
class Satisfied:
    def __bool__(self):
        return True


@dataclass(frozen=True)
class Violated:
    step: int
    reason: str     # "Avoid" | "Reach" | "Recurrence" | termination status

    def __bool__(self):
        return False


def _visits(inside: np.ndarray) -> int:
    """Number of maximal runs of consecutive samples inside a region."""
    if inside.size == 0:
        return 0
    return int(inside[0]) + int(np.sum(inside[1:] & ~inside[:-1]))


def check_trace(trace: TraceRecord, problem: ControlProblem, grid=None, cycles: int = 1):
    """Evaluate the problem's predicate on the sampled concrete states.

    With a grid, periodic coordinates are wrapped before the regions are
    tested, so regions only need to cover one period.
    """
    X = np.asarray(trace.states, dtype=float)
    if grid is not None:
        X = grid.wrap_points(X)
    if problem.avoid is not None:
        bad = np.flatnonzero(problem.avoid.contains(X))
        if bad.size:
            return Violated(int(bad[0]), "Avoid")
    if trace.termination in (OUTSIDE_DOMAIN, BLOCKED_PLANT):
        return Violated(len(X) - 1, trace.termination)
    if problem.kind == REACH_AVOID:
        hit = np.flatnonzero(problem.targets[0].contains(X))
        if hit.size == 0:
            return Violated(len(X) - 1, "Reach")
    elif problem.kind == RECURRENCE:
        for T in problem.targets:
            if _visits(T.contains(X)) < cycles:
                return Violated(len(X) - 1, "Recurrence")
    return Satisfied()


# -- finite perturbed loops ------------------------------------------------------

def robust_inputs(table, P2, x) -> set:
    """Inputs admissible for every possible measurement of ``x``."""
    sets = [set(table.image(m)) for m in P2.image(x)]
    return set.intersection(*sets) if sets else set()


def finite_closed_loop_traces(sys, table, P2, horizon: int, initial):
    """Traces ``((u0, x0), (u1, x1), ...)`` of a static controller ``table``
    (relation state -> input ids) reading measurements ``P2(x)``.

    Returns the set of traces of length ``horizon`` plus blocked shorter
    ones.  State and input ids are translated to labels when present.
    """
    sl = sys.state_labels or list(range(sys.n_states))
    il = sys.input_labels or list(range(sys.n_inputs))
    out = set()
    frontier = {((), x) for x in initial}
    for t in range(horizon):
        nxt = set()
        for trace, x in frontier:
            for m in P2.image(x):
                for u in table.image(m):
                    tr = trace + ((il[u], sl[x]),)
                    succ = sys.successors(x, u)
                    if succ.size == 0 or t == horizon - 1:
                        out.add(tr)
                        continue
                    nxt.update((tr, int(s)) for s in succ)
        frontier = nxt
    return out
