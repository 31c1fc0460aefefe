"""Finite abstractions of sampled systems related by set membership.

For every compact cell ``[c - r, c + r]`` and input ``u`` the reachable set
after one sampling period is over-approximated by
``flow(c, u) + [-beta(r, u), beta(r, u)]``; the successors are the cells
meeting that box.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._kernels import count_in_boxes
from .core import FiniteSystem, SuccessorBox, UniformGridCover, prefix_table
from .odeint import SamplingConfig, flow_batch, growth_radius, simulate_perturbed

CHUNK = 16384


@dataclass
class AbstractionSpec:
    grid: UniformGridCover
    inputs: np.ndarray
    vf: object
    L: object
    w: np.ndarray
    cfg: SamplingConfig
    blocked_cells: np.ndarray | None = None
    subdivision: np.ndarray | None = None
    beta_scale: float = 1.0  # < 1 only for mutation tests
    # "keep": overflow symbols are ordinary (sink) successors;
    # "block": reaching overflow makes the pair inadmissible
    overflow_policy: str = "keep"
    # "source": only blocked cells lose their inputs;
    # "touch": additionally block every pair with a blocked successor cell
    avoid_policy: str = "source"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.inputs.shape[0] < 1:
            raise ValueError("at least one input is required")
        self.w = np.asarray(self.w, dtype=float)
        if self.blocked_cells is None:
            self.blocked_cells = np.zeros(self.grid.n_cells, dtype=bool)
        self.blocked_cells = np.asarray(self.blocked_cells, dtype=bool)
        if self.blocked_cells.shape != (self.grid.n_cells,):
            raise ValueError("blocked_cells must have one entry per cell")
        sub = np.ones(self.grid.dim, dtype=np.int64) if self.subdivision is None \
            else np.broadcast_to(np.asarray(self.subdivision, dtype=np.int64), (self.grid.dim,))
        if np.any(sub < 1):
            raise ValueError("subdivision factors must be positive")
        self.subdivision = sub
        if self.overflow_policy not in ("keep", "block"):
            raise ValueError(f"unknown overflow policy {self.overflow_policy!r}")
        if self.avoid_policy not in ("source", "touch"):
            raise ValueError(f"unknown avoid policy {self.avoid_policy!r}")

    def sub_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Offsets of the sub-cell centers and the common sub-cell radius."""
        rho = self.grid.radius / self.subdivision
        axes = [(2 * np.arange(s) + 1 - s) * rho[i] for i, s in enumerate(self.subdivision)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1), rho


def _chunk(spec: AbstractionSpec, ids: np.ndarray, radii: list, offsets: np.ndarray,
           avoid_table, avoid_strides):
    grid = spec.grid
    m = len(spec.inputs)
    blocked = np.ones((len(ids), m), dtype=bool)
    lo = np.zeros((len(ids), m, grid.dim), dtype=np.int32)
    hi = np.zeros_like(lo)
    over = np.zeros((len(ids), m), dtype=np.int8)
    live = ~spec.blocked_cells[ids]
    if not live.any():
        return blocked, lo, hi, over
    c = grid.center(ids[live])
    for j, u in enumerate(spec.inputs):
        rp = radii[j]
        lb = ub = None
        bad = np.zeros(len(c), dtype=bool)
        for off in offsets:
            # bounding box of the union of the sub-cell over-approximations
            p = flow_batch(spec.vf, c + off, u, spec.cfg)
            bad |= ~np.isfinite(p).all(axis=1)
            lb = p - rp if lb is None else np.minimum(lb, p - rp)
            ub = p + rp if ub is None else np.maximum(ub, p + rp)
        kmin, kmax, finite, n_over = grid.raw_extent(lb, ub)
        l, h = grid.wrap_extent(kmin, kmax)
        bl = ~finite | bad
        if spec.overflow_policy == "block":
            bl |= n_over > 0
        if avoid_table is not None:
            empty = np.any((h < l) & ~grid.periodic, axis=1)
            hits = count_in_boxes(avoid_table, avoid_strides, l, h, grid.counts)
            bl |= ~empty & (hits > 0)
        l[bl] = 0
        h[bl] = 0
        n_over[bl] = 0
        blocked[live, j] = bl
        lo[live, j] = l
        hi[live, j] = h
        over[live, j] = n_over
    return blocked, lo, hi, over


def compute_transitions(spec: AbstractionSpec, workers: int = 1) -> FiniteSystem:
    """Box-mode abstraction of the sampled system described by ``spec``.

    Blocked cells have no admissible input, and neither has any pair whose
    nominal flow is not finite.  The policies on ``spec`` decide whether
    reaching an overflow symbol or a blocked cell also blocks a pair; the
    winning sets computed downstream are the same either way, only the
    stored transition relation differs.
    The work is split into fixed-size chunks of cell ids, so the result is
    bit-identical for any ``workers``.
    """
    grid = spec.grid
    offsets, rho = spec.sub_offsets()
    radii = [spec.beta_scale * growth_radius(spec.L, spec.w, rho, u, spec.cfg) for u in spec.inputs]
    if spec.avoid_policy == "touch" and spec.blocked_cells.any():
        avoid_table = prefix_table(grid, spec.blocked_cells)
        avoid_strides = np.asarray(avoid_table.strides, dtype=np.int64) // avoid_table.itemsize
    else:
        avoid_table = avoid_strides = None
    N = grid.n_cells
    starts = list(range(0, N, CHUNK))
    job = lambda s: _chunk(spec, np.arange(s, min(s + CHUNK, N)), radii, offsets,
                           avoid_table, avoid_strides)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    blocked = np.concatenate([p[0] for p in parts])
    lo = np.concatenate([p[1] for p in parts])
    hi = np.concatenate([p[2] for p in parts])
    over = np.concatenate([p[3] for p in parts])
    return FiniteSystem(N, len(spec.inputs), grid=grid, lo=lo, hi=hi, blocked=blocked,
                        overflow=over)


@dataclass
class CanonicityReport:
    samples: int
    pairs: int
    violations: int
    tightness: float
    inadmissible: int = 0
    witnesses: list = field(default_factory=list)


def _sample_in_cell(grid, center, count, rng):
    n = grid.dim
    r = grid.radius
    corners = np.array([[(b >> i) & 1 for i in range(n)] for b in range(1 << n)], dtype=float)
    pts = center + (2 * corners - 1) * r
    rest = max(count - len(pts), 0)
    inner = center + rng.uniform(-1, 1, size=(rest, n)) * r
    return np.vstack([pts, inner])[:count] if count < len(pts) else np.vstack([pts, inner])


def check_canonicity_sample(spec: AbstractionSpec, sys: FiniteSystem, n_samples: int,
                            rng: np.random.Generator | None = None, per_pair: int = 100,
                            segments: int = 20, steps_per_segment: int = 4) -> CanonicityReport:
    """Monte Carlo check that every simulated concrete transition is
    represented: each cell containing the landing point must be a listed
    successor, and a landing point beyond the compact region needs an
    overflow successor.  Non-finite concrete solutions count as violations
    of admissibility.  Initial points include the cell corners.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = spec.grid
    adm = np.argwhere(~sys.blocked)
    if len(adm) == 0:
        return CanonicityReport(0, 0, 0, float("nan"))
    n_pairs = max(1, n_samples // per_pair)
    picks = adm[rng.choice(len(adm), size=min(n_pairs, len(adm)), replace=False)]
    violations = inadmissible = samples = 0
    tight = []
    witnesses = []
    for x, u in picks:
        pts = _sample_in_cell(grid, grid.center(int(x)), per_pair, rng)
        end = simulate_perturbed(spec.vf, pts, spec.inputs[u], spec.cfg.tau, rng, w=spec.w,
                                 segments=segments, steps_per_segment=steps_per_segment)
        samples += len(pts)
        finite = np.all(np.isfinite(end), axis=1)
        inadmissible += int((~finite).sum())
        succ = sys.successors(int(x), int(u))
        pts_end = np.where(finite[:, None], end, np.nan)
        kmin, kmax, ok, n_over = grid.raw_extent(pts_end, pts_end)
        blk = ~ok | (n_over > 0)
        lo, hi = grid.wrap_extent(kmin, kmax)
        hit = set()
        for i in range(len(pts)):
            bad = not ok[i] or (n_over[i] > 0 and sys.overflow[x, u] == 0)
            if ok[i]:
                cells = grid.decode_box(SuccessorBox(False, tuple(lo[i]), tuple(hi[i])))
                bad = bad or np.setdiff1d(cells, succ).size > 0
                hit.update(cells.tolist())
            if bad:
                violations += 1
                witnesses.append((int(x), int(u), end[i].tolist()))
        if succ.size:
            tight.append(len(hit & set(succ.tolist())) / succ.size)
    return CanonicityReport(samples, len(picks), violations, float(np.mean(tight)) if tight else float("nan"),
                            inadmissible, witnesses[:10])
