"""Built-in plants: the kinematic vehicle, the DC9-30 landing model, and
affine systems ``x' = A x + B u + c``.

Each plant provides a batched vector field, an input-parametrised
Lipschitz matrix valid on its enclosure, and named scalar functions that
problem files may use in region constraints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Plant:
    name: str
    dim: int
    input_dim: int
    vf: object
    lipschitz: object
    functions: dict = field(default_factory=dict)
    input_bounds: tuple | None = None


# -- vehicle ------------------------------------------------------------------

def vehicle_field(x, u):
    u = np.asarray(u, dtype=float)
    u1 = u[..., 0][..., None] if u.ndim > 1 else u[0]
    u2 = u[..., 1][..., None] if u.ndim > 1 else u[1]
    alpha = np.arctan(np.tan(u2) / 2)
    th = x[..., 2:3] + alpha
    c = u1 / np.cos(alpha)
    return np.concatenate([c * np.cos(th), c * np.sin(th),
                           np.broadcast_to(u1 * np.tan(u2), th.shape)], axis=-1)


def vehicle_lipschitz(u):
    u = np.asarray(u, dtype=float)
    L = np.zeros((3, 3))
    L[0, 2] = L[1, 2] = abs(u[0] * np.sqrt(np.tan(u[1]) ** 2 / 4 + 1))
    return L


VEHICLE = Plant("vehicle", 3, 2, vehicle_field, vehicle_lipschitz,
                input_bounds=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])))


# -- aircraft -----------------------------------------------------------------

AIRCRAFT_MASS = 60e3
AIRCRAFT_MG = 60e3 * 9.81
GRAVITY = 9.81

# a-priori enclosure of one-period solutions from the flight envelope
# [58, 83] x [-3 deg, 0 deg] x [0, 56]: velocity and flight-path-angle ranges
AIRCRAFT_ENCLOSURE_V = (57.0, 84.0)
AIRCRAFT_ENCLOSURE_GAMMA = (np.deg2rad(-4.5), np.deg2rad(1.0))


def aircraft_field(x, u):
    u = np.asarray(u, dtype=float)
    u1 = u[..., 0][..., None] if u.ndim > 1 else u[0]
    u2 = u[..., 1][..., None] if u.ndim > 1 else u[1]
    v, gamma = x[..., 0:1], x[..., 1:2]
    c = 1.25 + 4.2 * u2
    drag = (2.7 + 3.08 * c * c) * v * v
    lift = 68.6 * c * v * v
    m = AIRCRAFT_MASS
    dv = (u1 * np.cos(u2) - drag - AIRCRAFT_MG * np.sin(gamma)) / m
    dg = (u1 * np.sin(u2) + lift - AIRCRAFT_MG * np.cos(gamma)) / (m * v)
    dh = v * np.sin(gamma)
    return np.concatenate([dv, dg, dh], axis=-1)


def aircraft_lipschitz(u):
    """Bounds on the state Jacobian over the enclosure (diagonal: signed sup,
    off-diagonal: sup of the absolute value)."""
    u1, u2 = float(u[0]), float(u[1])
    vmin, vmax = AIRCRAFT_ENCLOSURE_V
    gmin, gmax = AIRCRAFT_ENCLOSURE_GAMMA
    m = AIRCRAFT_MASS
    c = 1.25 + 4.2 * u2
    L = np.zeros((3, 3))
    L[0, 0] = -2 * (2.7 + 3.08 * c * c) * vmin / m
    L[0, 1] = GRAVITY
    L[1, 0] = abs(u1 * np.sin(u2)) / (m * vmin ** 2) + 68.6 * abs(c) / m + GRAVITY / vmin ** 2
    L[1, 1] = GRAVITY * max(np.sin(gmax), 0.0) / vmin
    L[2, 0] = max(abs(np.sin(gmin)), abs(np.sin(gmax)))
    L[2, 1] = vmax
    return L


def sink_rate(x):
    x = np.atleast_2d(x)
    return x[:, 0] * np.sin(x[:, 1])


AIRCRAFT = Plant("aircraft", 3, 2, aircraft_field, aircraft_lipschitz,
                 functions={"sink_rate": sink_rate},
                 input_bounds=(np.array([0.0, 0.0]), np.array([160e3, np.deg2rad(10.0)])))


# -- affine -------------------------------------------------------------------

def affine_plant(A, B, c=None) -> Plant:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise ValueError("inconsistent affine coefficient shapes")
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)

    def vf(x, u):
        return x @ A.T + np.asarray(u, dtype=float) @ B.T + c

    # exact Jacobian bound: signed diagonal, absolute off-diagonal
    L = np.abs(A)
    np.fill_diagonal(L, np.diag(A))
    return Plant("custom-affine", n, B.shape[1], vf, lambda u: L)


BUILTIN = {"vehicle": VEHICLE, "aircraft": AIRCRAFT}
