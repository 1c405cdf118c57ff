"""Sampled and limiting objective values.

The sampled objective is pathwise (one noise realization); averaging over
replications with common random numbers is the caller's loop.  The limiting
objective is a Monte Carlo estimate over draws from the initial law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EnsembleParamMismatch
from .params import ControlGrid, InitialLaw, ModelParams, control_h1_norms
from .sde import ParticleEnsemble, simulate_limit_sde


@dataclass(frozen=True)
class CostBreakdown:
    terminal: float
    running_state: float
    control_l2: float
    control_h1: float
    total: float

    @classmethod
    def from_parts(cls, terminal, running_state, control_l2, control_h1):
        parts = (float(terminal), float(running_state), float(control_l2), float(control_h1))
        return cls(*parts, total=float(sum(parts)))


def loss(p: ModelParams, x, y) -> float:
    """Terminal loss alpha * |x - y|^2."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(p.alpha * np.sum(diff * diff))


def control_costs(theta: ControlGrid, p: ModelParams):
    l2_sq, h1_sq = control_h1_norms(theta)
    return p.lambda1 * l2_sq, p.lambda2 * h1_sq


def evaluate_JN(ensemble: ParticleEnsemble, theta: ControlGrid, p: ModelParams) -> CostBreakdown:
    """Pathwise sampled objective for one simulated ensemble.

    Terminal and running state costs average over particles; the running
    integral uses the trapezoid rule on the simulation grid.
    """
    if abs(ensemble.t_grid[-1] - p.T) > 1e-12 * max(1.0, p.T):
        raise EnsembleParamMismatch("ensemble horizon differs from params")
    if abs(theta.horizon - p.T) > 1e-12 * max(1.0, p.T):
        raise EnsembleParamMismatch("control horizon differs from params")
    err = ensemble.X - ensemble.y0[:, None, :]          # (N, S+1, d)
    sq = np.mean(np.sum(err * err, axis=2), axis=0)      # (S+1,)
    terminal = p.alpha * sq[-1]
    running = p.beta * np.trapezoid(sq, ensemble.t_grid)
    l2_cost, h1_cost = control_costs(theta, p)
    return CostBreakdown.from_parts(terminal, running, l2_cost, h1_cost)


def evaluate_Jd(theta: ControlGrid, p: ModelParams, law: InitialLaw, n_paths, n_steps, seed):
    """Monte Carlo estimate of the limiting objective and its standard error.

    Per path: alpha |X(T) - Y|^2 + beta * trapezoid of |X(t) - Y|^2; the
    deterministic control costs are added outside the average and do not
    contribute to the standard error.
    """
    draws = law.sample(n_paths, seed)
    ens = simulate_limit_sde(p, theta, draws, n_steps, seed)
    err = ens.X - ens.y0[:, None, :]
    sq = np.sum(err * err, axis=2)                       # (M, S+1)
    per_path = p.alpha * sq[:, -1] + p.beta * np.trapezoid(sq, ens.t_grid, axis=1)
    l2_cost, h1_cost = control_costs(theta, p)
    estimate = float(np.mean(per_path) + l2_cost + h1_cost)
    std_error = float(np.std(per_path, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return estimate, std_error
