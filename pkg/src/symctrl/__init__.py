"""Abstraction-based synthesis of symbolic controllers for perturbed
sampled nonlinear systems."""
from .abstraction import AbstractionSpec, check_canonicity_sample, compute_transitions
from .core import (OVERFLOW, BoxRegion, ControlProblem, FiniteSystem, HyperInterval,
                   SuccessorBox, UniformGridCover)
from .odeint import BlowUpError, Disturbance, SamplingConfig, flow, growth_radius
from .problem import SchemaError, load_problem, read_problem
from .relations import check_behavioral_inclusion, check_frr
from .runtime import PerturbationConfig, check_trace, simulate
from .synthesis import Controller, solve_reach_avoid, solve_recurrence, solve_safety

__version__ = "0.1.0"
