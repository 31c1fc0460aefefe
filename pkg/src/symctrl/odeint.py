"""Fixed-step propagation of nominal solutions and growth-bound radii.

Vector fields are plain callables ``f(x, u)`` that accept a single state
``(n,)`` or a batch ``(N, n)`` and return derivatives of the same shape.
Input-disturbance simulation also passes a batch of inputs ``(N, m)``, so
fields should index inputs as ``u[..., j]``.  Lipschitz matrices are
callables ``L(u) -> (n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
LipschitzMatrix = Callable[[np.ndarray], np.ndarray]


class BlowUpError(ArithmeticError):
    """Raised when an integration produces non-finite values."""


@dataclass(frozen=True)
class SamplingConfig:
    tau: float
    substeps: int = 5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")


@dataclass(frozen=True)
class Disturbance:
    w: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("disturbance radius must be finite and nonnegative")
        object.__setattr__(self, "w", w)


def rk4(f, x, u, t_end: float, steps: int) -> np.ndarray:
    """Classical Runge-Kutta with ``steps`` equal steps on ``[0, t_end]``.

    Non-finite values propagate instead of raising, so batched callers can
    mask blown-up rows afterwards.
    """
    h = t_end / steps
    x = np.array(x, dtype=float)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            k1 = f(x, u)
            k2 = f(x + h / 2 * k1, u)
            k3 = f(x + h / 2 * k2, u)
            k4 = f(x + h * k3, u)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def flow_batch(vf: VectorField, c, u, cfg: SamplingConfig) -> np.ndarray:
    return rk4(vf, c, np.asarray(u, dtype=float), cfg.tau, cfg.substeps)


def flow(vf: VectorField, c, u, cfg: SamplingConfig) -> np.ndarray:
    """phi(tau, c, u) for the unperturbed system."""
    out = flow_batch(vf, np.asarray(c, dtype=float), u, cfg)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("nominal flow is not finite on [0, tau]")
    return out


def growth_radius(L: LipschitzMatrix, w, r, u, cfg: SamplingConfig) -> np.ndarray:
    """Growth bound after one sampling period.

    Integrates the radial equation ``r' = L(u) r + w`` from ``r``; this is the
    same quantity as ``expm(L tau) r + int_0^tau expm(L s) w ds``.  ``r`` may
    be a batch ``(N, n)``.
    """
    u = np.asarray(u, dtype=float)
    Lu = np.asarray(L(u), dtype=float)
    w = Disturbance(w).w if not isinstance(w, Disturbance) else w.w
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    out = rk4(lambda x, _: x @ Lu.T + w, r, u, cfg.tau, cfg.substeps)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("growth bound is not finite")
    return out


def simulate_perturbed(vf: VectorField, x0, u, tau: float, rng: np.random.Generator, *,
                       w=None, segments: int = 20, steps_per_segment: int = 4,
                       input_radius=None, input_bounds=None, bang_fraction: float = 0.5):
    """End states of perturbed trajectories over one sampling period.

    The disturbance is piecewise constant, resampled on ``segments`` equal
    sub-intervals.  Additive disturbances come from ``[-w, w]``; input
    disturbances (``input_radius``) perturb ``u`` inside ``input_bounds``.
    A fraction ``bang_fraction`` of the rows uses vertex values only, which
    tends to push trajectories to the extremes.
    """
    x = np.array(np.atleast_2d(x0), dtype=float)
    N, n = x.shape
    u = np.asarray(u, dtype=float)
    w = np.zeros(n) if w is None else np.asarray(w, dtype=float)
    bang = rng.random(N) < bang_fraction
    h = tau / segments

    def draw(radius, size):
        s = rng.uniform(-1.0, 1.0, size=size)
        s[bang] = np.sign(s[bang])
        return s * radius

    with np.errstate(all="ignore"):
        for _ in range(segments):
            d = draw(w, (N, n))
            if input_radius is not None:
                ub = u + draw(np.asarray(input_radius, dtype=float), (N, u.size))
                if input_bounds is not None:
                    ub = np.clip(ub, input_bounds[0], input_bounds[1])
                seg_f = lambda y, _, ub=ub, d=d: vf(y, ub) + d
            else:
                seg_f = lambda y, uu, d=d: vf(y, uu) + d
            x = rk4(seg_f, x, u, h, steps_per_segment)
    return x

