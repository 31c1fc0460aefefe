"""Fixed-point solvers on finite abstractions and controller extraction.

Sets of cells are flat boolean arrays over state ids.  The controllable
predecessor is computed for all pairs at once by a box-containment count
on the system's lattice boxes, so successor sets are never decoded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import layered_attractor
from .core import REACH_AVOID, RECURRENCE, SAFETY, FiniteSystem, UniformGridCover


class SynthesisError(RuntimeError):
    pass


def pre(sys: FiniteSystem, Z) -> tuple[np.ndarray, np.ndarray]:
    """Controllable predecessor of ``Z``.

    Returns the cells having an admissible input whose successors all lie
    in ``Z``, and the ``(n_states, n_inputs)`` table of witnessing inputs.
    """
    Z = np.asarray(Z, dtype=bool)
    ok = sys.contained_pairs(Z)
    return ok.any(axis=1), ok


@dataclass
class WinningSet:
    member: np.ndarray
    layers: list = field(default_factory=list)   # recurrence: one attractor per target
    ranks: list = field(default_factory=list)    # per target (safety: empty)
    iterations: int = 0

    @property
    def size(self) -> int:
        return int(self.member.sum())

    @property
    def empty(self) -> bool:
        return not self.member.any()


class Controller:
    """Lookup-table controller over abstract cells.

    One table per target (a single table for safety and reach-avoid).  Each
    table maps a cell to its sorted admissible input ids and a rank; rank 0
    marks the target-entry layer (reach-avoid: the target itself).  In
    recurrence mode the active target advances to ``(i + 1) % k`` once the
    entry layer of target ``i`` is reached.
    """

    def __init__(self, kind: str, n_inputs: int, tables: list, grid: UniformGridCover | None = None,
                 inputs=None):
        self.kind = kind
        self.n_inputs = int(n_inputs)
        self.grid = grid
        self.inputs = None if inputs is None else np.atleast_2d(np.asarray(inputs, dtype=float))
        self.tables = []
        for cells, ranks, allowed in tables:
            cells = np.asarray(cells, dtype=np.int64)
            order = np.argsort(cells, kind="stable")
            self.tables.append((cells[order], np.asarray(ranks, dtype=np.int64)[order],
                                np.asarray(allowed, dtype=bool).reshape(len(cells), self.n_inputs)[order]))

    @property
    def n_targets(self) -> int:
        return len(self.tables)

    def _row(self, cell: int, target: int):
        cells = self.tables[target][0]
        i = int(np.searchsorted(cells, cell))
        if i < len(cells) and cells[i] == cell:
            return i
        return None

    def in_domain(self, cell: int, target: int = 0) -> bool:
        return cell >= 0 and self._row(cell, target) is not None

    def inputs_at(self, cell: int, target: int = 0) -> np.ndarray:
        i = self._row(cell, target)
        if i is None:
            raise KeyError(f"cell {cell} is outside the controller domain")
        return np.flatnonzero(self.tables[target][2][i])

    def rank(self, cell: int, target: int = 0) -> int:
        i = self._row(cell, target)
        if i is None:
            raise KeyError(f"cell {cell} is outside the controller domain")
        return int(self.tables[target][1][i])

    def domain(self, target: int = 0) -> np.ndarray:
        return self.tables[target][0]

    def next_target(self, cell: int, target: int) -> int:
        """Target index after applying the controller at ``cell``."""
        if self.kind == RECURRENCE and self.rank(cell, target) == 0:
            return (target + 1) % self.n_targets
        return target

    def __eq__(self, other):
        if not isinstance(other, Controller):
            return NotImplemented
        same = (self.kind == other.kind and self.n_inputs == other.n_inputs
                and self.n_targets == other.n_targets)
        return same and all(np.array_equal(a, b) for t1, t2 in zip(self.tables, other.tables)
                            for a, b in zip(t1, t2))


def _table(member, ranks, allowed):
    cells = np.flatnonzero(member)
    return cells, ranks[cells], allowed[cells]


def solve_safety(sys: FiniteSystem, safe) -> tuple[WinningSet, Controller]:
    """Greatest fixed point ``Z = safe & pre(Z)``."""
    Z = np.asarray(safe, dtype=bool).copy()
    it = 0
    while True:
        it += 1
        if it > sys.n_states + 1:
            raise SynthesisError("safety iteration did not terminate")
        p, ok = pre(sys, Z)
        nz = Z & p
        if np.array_equal(nz, Z):
            break
        Z = nz
    ranks = np.zeros(sys.n_states, dtype=np.int64)
    ctrl = Controller(SAFETY, sys.n_inputs, [_table(Z, ranks, ok & Z[:, None])], grid=sys.grid)
    return WinningSet(Z, [Z], [], it), ctrl


def _attractor(sys: FiniteSystem, base, avoid, entry_ok=None):
    """Least fixed point of ``Y = base | pre(Y)`` with breadth-first ranks.

    Returns ``(Y, ranks, allowed, layers)`` where ``allowed`` holds the
    rank-decreasing inputs of every cell of rank > 0 and ``entry_ok`` (when
    given) the inputs of the rank-0 cells.
    """
    n = sys.n_states
    ptr, pairs, sizes = sys.predecessors()
    base = np.asarray(base, dtype=bool)
    ranks, zero_at, layers = layered_attractor(ptr, pairs, sizes, sys.n_inputs, base,
                                               np.asarray(avoid, dtype=bool), n)
    if layers < 0:
        raise SynthesisError("reachability iteration did not terminate")
    Y = ranks >= 0
    zero_at = zero_at.reshape(n, sys.n_inputs)
    allowed = (zero_at == ranks[:, None]) & (ranks[:, None] > 0)
    if entry_ok is not None:
        b = ranks == 0
        allowed[b] = entry_ok[b]
    return Y, ranks, allowed, layers


def solve_reach_avoid(sys: FiniteSystem, target, avoid=None) -> tuple[WinningSet, Controller, np.ndarray]:
    """Minimal-rank attractor of ``target`` avoiding ``avoid``.

    Target cells get rank 0; their table rows hold the inputs that keep the
    successors inside the winning set (possibly none, since reaching the
    target completes the task).
    """
    n = sys.n_states
    avoid = np.zeros(n, dtype=bool) if avoid is None else np.asarray(avoid, dtype=bool)
    Y, ranks, allowed, it = _attractor(sys, target, avoid)
    _, ok = pre(sys, Y)
    base = ranks == 0
    allowed[base] = ok[base]
    ctrl = Controller(REACH_AVOID, sys.n_inputs, [_table(Y, ranks, allowed)], grid=sys.grid)
    return WinningSet(Y, [Y], [ranks], it), ctrl, ranks


def solve_recurrence(sys: FiniteSystem, targets: list, avoid=None) -> tuple[WinningSet, Controller]:
    """``nu Z. AND_i mu Y. (pre(Y) | (T_i & pre(Z)))``.

    The controller for target ``i`` uses rank-decreasing inputs outside the
    entry layer ``T_i & pre(Z)`` and Z-preserving inputs on it.
    """
    if len(targets) < 1:
        raise ValueError("recurrence needs at least one target")
    n = sys.n_states
    avoid = np.zeros(n, dtype=bool) if avoid is None else np.asarray(avoid, dtype=bool)
    targets = [np.asarray(t, dtype=bool) for t in targets]
    Z = ~avoid
    outer = inner = 0
    while True:
        outer += 1
        if outer > n + 1:
            raise SynthesisError("recurrence iteration did not terminate")
        pz, okz = pre(sys, Z)
        results = []
        for T in targets:
            Y, ranks, allowed, k = _attractor(sys, T & pz, avoid, entry_ok=okz)
            inner += k
            results.append((Y, ranks, allowed))
        nz = np.logical_and.reduce([r[0] for r in results]) & Z
        if np.array_equal(nz, Z):
            break
        Z = nz
    if inner > n * n + len(targets) * (n + 1):
        raise SynthesisError("recurrence exceeded its iteration budget")
    tables = [_table(Y, ranks, allowed) for Y, ranks, allowed in results]
    ctrl = Controller(RECURRENCE, sys.n_inputs, tables, grid=sys.grid)
    return WinningSet(Z, [r[0] for r in results], [r[1] for r in results], outer), ctrl
