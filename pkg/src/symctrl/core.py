"""Grids, cells, finite systems and control problems.

All geometry on the grid is done in index space: a real coordinate is
converted to a fractional cell position once, and everything after that
is integer arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ._kernels import box_predecessors, count_in_boxes, list_predecessors

OVERFLOW = -1


@dataclass(frozen=True)
class HyperInterval:
    """Closed axis-aligned box ``[lb, ub]``."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.atleast_1d(np.asarray(self.lb, dtype=float))
        ub = np.atleast_1d(np.asarray(self.ub, dtype=float))
        if lb.shape != ub.shape:
            raise ValueError("lb and ub must have the same shape")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("hyper-interval bounds must be finite")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def from_center(cls, center, radius) -> "HyperInterval":
        c = np.asarray(center, dtype=float)
        r = np.asarray(radius, dtype=float)
        return cls(c - r, c + r)

    @property
    def dim(self) -> int:
        return self.lb.size

    @property
    def center(self) -> np.ndarray:
        return (self.ub + self.lb) / 2

    @property
    def radius(self) -> np.ndarray:
        return (self.ub - self.lb) / 2

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.lb <= x) and np.all(x <= self.ub))


@dataclass(frozen=True)
class SuccessorBox:
    """Lattice box of successor cells; ``lo``/``hi`` are inclusive corners.

    On periodic dimensions ``hi < lo`` denotes a range that wraps around.
    """

    blocked: bool
    lo: tuple = ()
    hi: tuple = ()

    @classmethod
    def block(cls) -> "SuccessorBox":
        return cls(True)


class UniformGridCover:
    """Uniform cover of a box by closed cells plus implicit overflow symbols.

    Cell ``k`` (a multi-index) has center ``first_center + k * eta`` and
    radius ``eta / 2 + inflation``.  Neighbouring cells share faces (or
    overlap, when inflated); quantization uses the half-open cell
    ``[center - eta/2, center + eta/2)`` so that it is a function.
    """

    def __init__(self, first_center, eta, counts, periodic=None, inflation=None,
                 period_length=None):
        self.first_center = np.atleast_1d(np.asarray(first_center, dtype=float))
        self.eta = np.atleast_1d(np.asarray(eta, dtype=float))
        self.counts = np.atleast_1d(np.asarray(counts, dtype=np.int64))
        n = self.first_center.size
        if self.eta.shape != (n,) or self.counts.shape != (n,):
            raise ValueError("first_center, eta and counts must have equal length")
        if np.any(self.eta <= 0):
            raise ValueError("eta must be positive")
        if np.any(self.counts < 1):
            raise ValueError("counts must be positive")
        self.periodic = (np.zeros(n, dtype=bool) if periodic is None
                         else np.atleast_1d(np.asarray(periodic, dtype=bool)))
        self.inflation = (np.zeros(n) if inflation is None
                          else np.atleast_1d(np.asarray(inflation, dtype=float)))
        if self.periodic.shape != (n,) or self.inflation.shape != (n,):
            raise ValueError("periodic and inflation must have length n")
        if np.any(self.inflation < 0):
            raise ValueError("inflation must be nonnegative")
        expected = self.counts * self.eta
        if period_length is not None:
            pl = np.atleast_1d(np.asarray(period_length, dtype=float))
            bad = self.periodic & ~np.isclose(pl, expected, rtol=1e-12, atol=0)
            if np.any(bad):
                raise ValueError("period_length must equal counts * eta on periodic dimensions")
        self.period_length = np.where(self.periodic, expected, np.nan)
        self.edge = self.first_center - self.eta / 2
        self.strides = np.ones(n, dtype=np.int64)
        for i in range(n - 2, -1, -1):
            self.strides[i] = self.strides[i + 1] * self.counts[i + 1]
        for a in ("first_center", "eta", "counts", "periodic", "inflation",
                  "period_length", "edge", "strides"):
            getattr(self, a).setflags(write=False)

    # -- basic properties ---------------------------------------------------
    @property
    def dim(self) -> int:
        return self.first_center.size

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @property
    def radius(self) -> np.ndarray:
        return self.eta / 2 + self.inflation

    def params(self) -> dict:
        return {
            "first_center": self.first_center.tolist(),
            "eta": self.eta.tolist(),
            "counts": self.counts.tolist(),
            "periodic": self.periodic.tolist(),
            "inflation": self.inflation.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, UniformGridCover):
            return NotImplemented
        return self.params() == other.params()

    def __repr__(self):
        return f"UniformGridCover(counts={self.counts.tolist()}, eta={self.eta.tolist()})"

    # -- index encoding -------------------------------------------------------
    def encode(self, k) -> np.ndarray | int:
        k = np.asarray(k, dtype=np.int64)
        ids = k @ self.strides
        return int(ids) if np.ndim(ids) == 0 else ids

    def decode(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return (ids[..., None] // self.strides) % self.counts

    def center(self, ids) -> np.ndarray:
        return self.first_center + self.decode(ids) * self.eta

    def cell(self, cell_id: int) -> HyperInterval:
        return HyperInterval.from_center(self.center(cell_id), self.radius)

    def cell_bounds(self, ids=None):
        """(lb, ub) arrays of the closed (inflated) extents of ``ids`` (default: all)."""
        if ids is None:
            ids = np.arange(self.n_cells)
        c = self.center(ids)
        return c - self.radius, c + self.radius

    # -- quantization ---------------------------------------------------------
    def _position(self, x):
        return (np.asarray(x, dtype=float) - self.edge) / self.eta

    def cells_of_points(self, x) -> np.ndarray:
        """Vectorised quantizer; returns ``OVERFLOW`` for points outside the grid."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {x.shape[-1]}")
        k = np.floor(self._position(x))
        # one-step correction so that the chosen cell contains x in the
        # same floating-point arithmetic that produces the cell bounds
        with np.errstate(invalid="ignore"):
            c = self.first_center + k * self.eta
            k = np.where(x < c - self.eta / 2, k - 1, np.where(x > c + self.eta / 2, k + 1, k))
        k = np.where(self.periodic, np.mod(k, self.counts), k)
        out = np.any((k < 0) | (k >= self.counts) | ~np.isfinite(k), axis=-1)
        k = np.where(np.isfinite(k), k, 0).astype(np.int64)
        ids = k @ self.strides
        return np.where(out, OVERFLOW, ids)

    def wrap_points(self, x) -> np.ndarray:
        """Representatives of ``x`` with periodic coordinates moved into
        ``[edge, edge + period)``; other coordinates are unchanged."""
        x = np.array(x, dtype=float)
        if self.periodic.any():
            p = self.periodic
            x[..., p] = self.edge[p] + np.mod(x[..., p] - self.edge[p], self.period_length[p])
        return x

    def cell_of_point(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}")
        return int(self.cells_of_points(x[None, :])[0])

    # -- box queries ----------------------------------------------------------
    def raw_extent(self, lb, ub):
        """Unclipped index range of cells meeting each box, and overflow hits.

        Returns ``(kmin, kmax, finite, n_overflow)`` where ``n_overflow``
        counts the overflow symbols (two per non-periodic dimension, one
        below and one above the compact region) the box reaches into.
        """
        lb = np.atleast_2d(np.asarray(lb, dtype=float))
        ub = np.atleast_2d(np.asarray(ub, dtype=float))
        if lb.shape[-1] != self.dim or ub.shape != lb.shape:
            raise ValueError("box dimension mismatch")
        finite = np.all(np.isfinite(lb) & np.isfinite(ub), axis=1)
        lbf = np.where(np.isfinite(lb), lb, 0.0)
        ubf = np.where(np.isfinite(ub), ub, 0.0)
        kmin = np.ceil((lbf - self.inflation - self.edge) / self.eta).astype(np.int64) - 1
        kmax = np.floor((ubf + self.inflation - self.edge) / self.eta).astype(np.int64)
        # inflated overflow symbols are hit when the box crosses the compact edge
        top = self.edge + self.counts * self.eta
        below = (lbf < self.edge + self.inflation) & ~self.periodic
        above = (ubf > top - self.inflation) & ~self.periodic
        n_overflow = below.sum(axis=1) + above.sum(axis=1)
        return kmin, kmax, finite, n_overflow

    def wrap_extent(self, kmin, kmax):
        """Reduce unclipped ranges to lattice corners.

        Periodic dimensions wrap modulo the count (full coverage when the
        range is at least one period wide); non-periodic dimensions are
        clipped, and a range lying entirely outside comes back with
        ``hi < lo`` (no compact cell on that axis).
        """
        n = self.counts
        full = (kmax - kmin + 1) >= n
        lo = np.where(self.periodic, np.where(full, 0, np.mod(kmin, n)), np.clip(kmin, 0, n))
        hi = np.where(self.periodic, np.where(full, n - 1, np.mod(kmax, n)), np.clip(kmax, -1, n - 1))
        return lo, hi

    def lattice_boxes(self, lb, ub):
        """Vectorised cell-intersection query.

        Returns ``(blocked, lo, hi)`` for boxes given row-wise by ``lb``/``ub``.
        A box is blocked when it reaches an overflow symbol on a non-periodic
        dimension, or when its bounds are not finite.
        """
        kmin, kmax, finite, n_over = self.raw_extent(lb, ub)
        blocked = ~finite | (n_over > 0)
        lo, hi = self.wrap_extent(kmin, kmax)
        lo[blocked] = 0
        hi[blocked] = 0
        return blocked, lo, hi

    def cells_intersecting(self, box: HyperInterval) -> SuccessorBox:
        if box.dim != self.dim:
            raise ValueError(f"expected a box of dimension {self.dim}")
        blocked, lo, hi = self.lattice_boxes(box.lb[None, :], box.ub[None, :])
        if blocked[0]:
            return SuccessorBox.block()
        return SuccessorBox(False, tuple(int(v) for v in lo[0]), tuple(int(v) for v in hi[0]))

    def box_widths(self, lo, hi) -> np.ndarray:
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        wrapped = np.where(self.periodic, hi + self.counts - lo + 1, 0)
        return np.where(hi >= lo, hi - lo + 1, wrapped)

    def decode_box(self, sb: SuccessorBox) -> np.ndarray:
        if sb.blocked:
            raise ValueError("cannot decode a blocked successor box")
        axes = []
        for i in range(self.dim):
            lo, hi, n = sb.lo[i], sb.hi[i], int(self.counts[i])
            if hi >= lo or not self.periodic[i]:
                axes.append(np.arange(lo, hi + 1))
            else:
                axes.append(np.concatenate([np.arange(lo, n), np.arange(0, hi + 1)]))
        mesh = np.meshgrid(*axes, indexing="ij")
        k = np.stack([m.ravel() for m in mesh], axis=1)
        return np.sort(k @ self.strides)


class FiniteSystem:
    """Explicit simple system over integer state and input ids.

    Two storage modes share one interface:

    * box mode -- one lattice box per (state, input), backed by a grid,
      plus the number of overflow symbols among the successors.  Overflow
      symbols have no outgoing transitions and no id; a pair that reaches
      one is admissible but can never lead into a winning set;
    * list mode -- an explicit successor set per (state, input), used for
      hand-built fixtures.  Stored in CSR layout with pair index
      ``state * n_inputs + input``.
    """

    def __init__(self, n_states: int, n_inputs: int, *, grid: UniformGridCover | None = None,
                 lo=None, hi=None, blocked=None, overflow=None, indptr=None, indices=None,
                 state_labels: Sequence | None = None, input_labels: Sequence | None = None):
        if n_states < 1 or n_inputs < 1:
            raise ValueError("a system needs at least one state and one input")
        self.n_states = int(n_states)
        self.n_inputs = int(n_inputs)
        self.grid = grid
        self.state_labels = list(state_labels) if state_labels is not None else None
        self.input_labels = list(input_labels) if input_labels is not None else None
        if grid is not None:
            if grid.n_cells != n_states:
                raise ValueError("grid cell count does not match n_states")
            shape = (n_states, n_inputs)
            self.blocked = np.asarray(blocked, dtype=bool).reshape(shape)
            self.lo = np.asarray(lo, dtype=np.int32).reshape(shape + (grid.dim,))
            self.hi = np.asarray(hi, dtype=np.int32).reshape(shape + (grid.dim,))
            self.overflow = (np.zeros(shape, dtype=np.int8) if overflow is None
                             else np.asarray(overflow, dtype=np.int8).reshape(shape))
            self.indptr = self.indices = None
            for a in (self.blocked, self.lo, self.hi, self.overflow):
                a.setflags(write=False)
        else:
            self.indptr = np.asarray(indptr, dtype=np.int64)
            self.indices = np.asarray(indices, dtype=np.int64)
            if self.indptr.shape != (n_states * n_inputs + 1,):
                raise ValueError("indptr has the wrong length")
            self.blocked = (np.diff(self.indptr) == 0).reshape(n_states, n_inputs)
            self.overflow = np.zeros((n_states, n_inputs), dtype=np.int8)
            self.lo = self.hi = None
            for a in (self.blocked, self.indptr, self.indices):
                a.setflags(write=False)

    @classmethod
    def from_successors(cls, successors, n_states: int | None = None, n_inputs: int | None = None,
                        **labels) -> "FiniteSystem":
        """Build a list-mode system from ``successors[x][u] -> iterable of ids``."""
        if n_states is None:
            n_states = len(successors)
        if n_inputs is None:
            n_inputs = max(len(row) for row in successors)
        indptr = [0]
        indices: list[int] = []
        for x in range(n_states):
            row = successors[x] if x < len(successors) else []
            for u in range(n_inputs):
                succ = sorted(set(row[u])) if u < len(row) else []
                if any(not 0 <= s < n_states for s in succ):
                    raise ValueError(f"successor id out of range at ({x}, {u})")
                indices.extend(succ)
                indptr.append(len(indices))
        return cls(n_states, n_inputs, indptr=indptr, indices=indices, **labels)

    @property
    def is_box(self) -> bool:
        return self.grid is not None

    def admissible(self) -> np.ndarray:
        """Boolean ``(n_states, n_inputs)`` table of pairs with nonempty successor sets."""
        return ~self.blocked

    def admissible_inputs(self, x: int) -> np.ndarray:
        return np.flatnonzero(~self.blocked[x])

    def successors(self, x: int, u: int) -> np.ndarray:
        """Sorted ids of the compact successor cells (overflow symbols excluded)."""
        if self.blocked[x, u]:
            return np.empty(0, dtype=np.int64)
        if self.is_box:
            return self.grid.decode_box(SuccessorBox(False, tuple(self.lo[x, u]), tuple(self.hi[x, u])))
        p = x * self.n_inputs + u
        return self.indices[self.indptr[p]:self.indptr[p + 1]].copy()

    def successor_box(self, x: int, u: int) -> SuccessorBox:
        if not self.is_box:
            raise TypeError("successor boxes exist only in box mode")
        if self.blocked[x, u]:
            return SuccessorBox.block()
        return SuccessorBox(False, tuple(int(v) for v in self.lo[x, u]),
                            tuple(int(v) for v in self.hi[x, u]))

    def pair_sizes(self) -> np.ndarray:
        """Number of successors per pair, overflow symbols included (0 for blocked pairs)."""
        if self.is_box:
            sizes = np.prod(self.grid.box_widths(self.lo, self.hi), axis=-1, dtype=np.int64)
            return np.where(self.blocked, 0, sizes + self.overflow)
        return np.diff(self.indptr).reshape(self.n_states, self.n_inputs)

    def transition_count(self) -> int:
        return int(self.pair_sizes().sum(dtype=np.int64))

    def contained_pairs(self, mask) -> np.ndarray:
        """Pairs that are admissible and whose successors all lie in ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.n_states,):
            raise ValueError("mask must have one entry per state")
        if self.is_box:
            outside = _box_outside_counts(self.grid, ~mask, self.lo, self.hi)
            return ~self.blocked & (self.overflow == 0) & (outside == 0)
        bad = (~mask).astype(np.int64)
        per_pair = np.add.reduceat(np.append(bad[self.indices], 0), self.indptr[:-1]) \
            if self.indices.size else np.zeros(self.n_states * self.n_inputs, dtype=np.int64)
        per_pair = np.where(np.diff(self.indptr) == 0, 0, per_pair)
        return ~self.blocked & (per_pair.reshape(self.n_states, self.n_inputs) == 0)

    def predecessors(self):
        """Cached reverse index ``(indptr, pairs, sizes)``.

        Only pairs without overflow successors are indexed; ``sizes`` is the
        number of successor cells of each indexed pair and 0 otherwise.
        """
        if getattr(self, "_pred", None) is None:
            usable = (~self.blocked & (self.overflow == 0)).ravel()
            if self.is_box:
                g = self.grid
                self._pred = box_predecessors(
                    self.lo.reshape(-1, g.dim), self.hi.reshape(-1, g.dim), usable,
                    g.counts, g.strides, g.periodic, self.n_states)
            else:
                self._pred = list_predecessors(self.indptr, self.indices, usable, self.n_states)
        return self._pred

    def to_successor_lists(self) -> list[list[np.ndarray]]:
        return [[self.successors(x, u) for u in range(self.n_inputs)] for x in range(self.n_states)]


def prefix_table(grid: UniformGridCover, indicator: np.ndarray) -> np.ndarray:
    """Zero-padded n-D cumulative sums; periodic axes are tiled twice so that
    wrapped ranges become contiguous."""
    a = np.asarray(indicator, dtype=np.int32).reshape(tuple(grid.counts))
    for axis in np.flatnonzero(grid.periodic):
        a = np.concatenate([a, a], axis=axis)
    a = np.pad(a, [(1, 0)] * grid.dim)
    for axis in range(grid.dim):
        a = np.cumsum(a, axis=axis, dtype=np.int32)
    return np.ascontiguousarray(a)


def _box_outside_counts(grid: UniformGridCover, indicator, lo, hi) -> np.ndarray:
    table = prefix_table(grid, indicator)
    shape = lo.shape[:-1]
    lo2 = lo.reshape(-1, grid.dim)
    hi2 = hi.reshape(-1, grid.dim)
    counts = count_in_boxes(table, np.asarray(table.strides, dtype=np.int64) // table.itemsize,
                            lo2, hi2, grid.counts)
    return counts.reshape(shape)


# -- regions and control problems --------------------------------------------

@dataclass
class BoxRegion:
    """Union of closed boxes, optionally complemented and intersected with
    constraints ``g(x) >= bound``.

    Constraint functions must attain their extrema over any box at a corner
    (monotone in each coordinate on the relevant range); this is what makes
    the cell-level tests exact.
    """

    boxes: list = field(default_factory=list)
    complement: bool = False
    constraints: list = field(default_factory=list)  # (fn, bound) pairs

    def __post_init__(self):
        self.boxes = [(np.asarray(lb, dtype=float), np.asarray(ub, dtype=float))
                      for lb, ub in self.boxes]

    def _raw_contains(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.zeros(len(x), dtype=bool)
        for lb, ub in self.boxes:
            inside |= np.all((lb <= x) & (x <= ub), axis=1)
        return inside

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self._raw_contains(x)
        if self.complement:
            inside = ~inside
        for fn, bound in self.constraints:
            inside &= fn(x) >= bound
        return inside

    def _raw_intersects(self, lb, ub):
        hit = np.zeros(len(lb), dtype=bool)
        for blb, bub in self.boxes:
            hit |= np.all((lb <= bub) & (blb <= ub), axis=1)
        return hit

    def _raw_inside(self, lb, ub):
        # conservative for unions: the box must fit inside a single member
        inside = np.zeros(len(lb), dtype=bool)
        for blb, bub in self.boxes:
            inside |= np.all((blb <= lb) & (ub <= bub), axis=1)
        return inside

    def intersects_boxes(self, lb, ub) -> np.ndarray:
        """Over-approximate test ``box ∩ region ≠ ∅`` (exact without constraints)."""
        lb = np.atleast_2d(lb)
        ub = np.atleast_2d(ub)
        hit = ~self._raw_inside(lb, ub) if self.complement else self._raw_intersects(lb, ub)
        for fn, bound in self.constraints:
            hit &= _corner_extreme(fn, lb, ub, np.max) >= bound
        return hit

    def contains_boxes(self, lb, ub) -> np.ndarray:
        """Under-approximate test ``box ⊆ region``."""
        lb = np.atleast_2d(lb)
        ub = np.atleast_2d(ub)
        inside = ~self._raw_intersects(lb, ub) if self.complement else self._raw_inside(lb, ub)
        for fn, bound in self.constraints:
            inside &= _corner_extreme(fn, lb, ub, np.min) >= bound
        return inside


def _corner_extreme(fn, lb, ub, reduce):
    n = lb.shape[1]
    vals = []
    for bits in range(1 << n):
        pick = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        vals.append(fn(np.where(pick, ub, lb)))
    return reduce(np.stack(vals), axis=0)


SAFETY = "safety"
REACH_AVOID = "reach-avoid"
RECURRENCE = "recurrence"
KINDS = (SAFETY, REACH_AVOID, RECURRENCE)


@dataclass
class ControlProblem:
    """Specification over the concrete state space.

    Cell-level predicates follow the usual abstract-specification rules:
    avoid and initial cells are those *intersecting* the region, target
    cells are those *contained* in it.
    """

    kind: str
    avoid: Optional[BoxRegion] = None
    targets: list = field(default_factory=list)
    initial: Optional[BoxRegion] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == REACH_AVOID and len(self.targets) != 1:
            raise ValueError("a reach-avoid problem needs exactly one target")
        if self.kind == RECURRENCE and len(self.targets) < 1:
            raise ValueError("a recurrence problem needs at least one target")

    def avoid_cells(self, grid: UniformGridCover) -> np.ndarray:
        if self.avoid is None:
            return np.zeros(grid.n_cells, dtype=bool)
        return self.avoid.intersects_boxes(*grid.cell_bounds())

    def target_cells(self, grid: UniformGridCover) -> list[np.ndarray]:
        lb, ub = grid.cell_bounds()
        return [t.contains_boxes(lb, ub) for t in self.targets]

    def initial_cells(self, grid: UniformGridCover) -> np.ndarray:
        if self.initial is None:
            return np.zeros(grid.n_cells, dtype=bool)
        return self.initial.intersects_boxes(*grid.cell_bounds())
