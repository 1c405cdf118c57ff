"""Limiting control problem in the scalar two-weight configuration.

The optimal depth-weight path is characterized by lambda1 * theta -
lambda2 * theta'' = G(theta) with zero-derivative boundary conditions,
where G is an expectation over the augmented paths.  We estimate G by
Monte Carlo, invert the Neumann operator with a tridiagonal solve, and
iterate the damped fixed-point map with frozen per-iteration seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ScalarConfigRequired, GridMismatch, NoConvergence, NonPositiveWeight, SingularSystem
from .params import ControlGrid, InitialLaw, ModelParams, project_to_box
from .rng import split_seed
from .sde import simulate_augmented


@dataclass(frozen=True)
class GridFunction:
    """Node values of a vector function on the control grid, with MC errors."""

    t_grid: np.ndarray     # (M+1,)
    values: np.ndarray     # (M+1, m)
    std_errors: np.ndarray  # (M+1, m)


@dataclass(frozen=True)
class FixedPointConfig:
    damping: float = 0.25
    mc_paths: int = 4096
    outer_iters: int = 60
    outer_tol: float = 1e-3
    n_intervals: int = 32
    seed: int = 0
    seed_policy: str = "fixed"   # "fixed": same MC seed each iteration; "refresh": new seed per iteration

    def __post_init__(self):
        if not (0.0 < self.damping <= 1.0):
            raise NonPositiveWeight("damping must lie in (0, 1]")
        if self.seed_policy not in ("fixed", "refresh"):
            raise NonPositiveWeight("seed_policy must be 'fixed' or 'refresh'")


def estimate_G(theta: ControlGrid, p: ModelParams, law: InitialLaw,
               n_paths: int, n_steps: int, seed) -> GridFunction:
    """Monte Carlo estimate of the first-order-condition right-hand side.

    Per path and node t: -(beta) * exp(-X1(t)) (X2(T) - X2(t)) grad_theta f
    - (alpha) * exp(X1(t) - X1(T)) (X3(T) - Y) grad_theta f, averaged over
    paths, with per-node standard errors.  The alpha/beta scaling matches
    the sampled objective so the trainer and this solver target the same
    minimum (the bare characterization corresponds to alpha = 1).
    """
    if not p.is_scalar_two_weight():
        raise ScalarConfigRequired("G is defined for the scalar two-weight configuration")
    if n_steps != theta.t_grid.size - 1:
        raise GridMismatch("G must be estimated on the control grid")
    aug = simulate_augmented(p, theta, law.sample(n_paths, seed), n_steps, seed)
    act = p.activation
    theta_nodes = theta.value_at(aug.t_grid)   # (S+1, 2)
    x3 = aug.X3
    if act.kind in ("zero", "constant"):
        gp = np.zeros_like(x3)
    else:
        u = x3 * theta_nodes[:, 0][None, :] + theta_nodes[:, 1][None, :]
        gp = act._g_prime(u)
    dtheta_f = np.stack([gp * x3, gp], axis=-1)  # (M, S+1, 2)

    a_t = aug.X1
    a_term = aug.X1[:, -1][:, None]
    weight = (
        -p.beta * np.exp(-a_t) * (aug.X2[:, -1][:, None] - aug.X2)
        - p.alpha * np.exp(a_term - a_t) * (x3[:, -1] - aug.Y0)[:, None]
    )
    integrand = weight[:, :, None] * dtheta_f    # (M, S+1, 2)
    values = np.mean(integrand, axis=0)
    if n_paths > 1:
        std_errors = np.std(integrand, axis=0, ddof=1) / math.sqrt(n_paths)
    else:
        std_errors = np.zeros_like(values)
    return GridFunction(t_grid=aug.t_grid, values=values, std_errors=std_errors)


def solve_neumann_bvp(G: GridFunction, lambda1: float, lambda2: float,
                      k_theta: float = np.inf) -> ControlGrid:
    """Solve lambda1 theta - lambda2 theta'' = G with theta'(0) = theta'(T) = 0.

    Central second differences with symmetric ghost nodes at the ends; the
    tridiagonal system is strictly diagonally dominant for lambda1 > 0.
    """
    if lambda1 <= 0 or lambda2 <= 0:
        raise NonPositiveWeight("lambda1 and lambda2 must be positive")
    t = G.t_grid
    n = t.size
    h = t[1] - t[0]
    r = lambda2 / (h * h)
    ab = np.zeros((3, n))
    ab[1, :] = lambda1 + 2.0 * r
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[0, 1] = -2.0 * r   # ghost closure at t=0
    ab[2, -2] = -2.0 * r  # ghost closure at t=T
    try:
        theta = scipy.linalg.solve_banded((1, 1), ab, G.values)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cannot occur for lambda1>0
        raise SingularSystem(str(exc)) from exc
    return ControlGrid(t_grid=t, values=theta, k_theta=k_theta)


def neumann_derivatives(theta: ControlGrid):
    """One-sided second-order derivative magnitudes at both ends, per component."""
    v = theta.values
    h = theta.dt
    d0 = np.abs(-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    dT = np.abs(3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return d0, dT


def fixed_point_solve(p: ModelParams, law: InitialLaw, cfg: FixedPointConfig,
                      theta0: ControlGrid | None = None):
    """Damped fixed-point iteration theta <- (1-eta) theta + eta P[BVP(G(theta))].

    With the fixed seed policy the map is deterministic.  On convergence the
    returned path is the full (undamped) image of the last iterate, so it
    satisfies the discrete characterization up to the change tolerance and
    Monte Carlo noise.  Raises NoConvergence (carrying the change trace)
    otherwise.
    """
    if theta0 is None:
        theta0 = ControlGrid.zeros(p.T, cfg.n_intervals, m=p.dims.m, k_theta=p.k_theta)
    theta = project_to_box(theta0)
    n_steps = theta.t_grid.size - 1
    trace = []
    for it in range(cfg.outer_iters):
        seed_it = cfg.seed if cfg.seed_policy == "fixed" else split_seed(cfg.seed, f"outer{it}")
        G = estimate_G(theta, p, law, cfg.mc_paths, n_steps, seed_it)
        cand = project_to_box(solve_neumann_bvp(G, p.lambda1, p.lambda2, k_theta=p.k_theta))
        new_values = (1.0 - cfg.damping) * theta.values + cfg.damping * cand.values
        change = float(np.max(np.abs(new_values - theta.values)))
        trace.append(change)
        if change < cfg.outer_tol:
            return cand, trace
        theta = theta.with_values(new_values)
    raise NoConvergence(f"no convergence in {cfg.outer_iters} iterations", trace)


def residual_first_order(theta: ControlGrid, p: ModelParams, law: InitialLaw,
                         n_paths: int, seed) -> float:
    """Convergence certificate: interior sup-norm of lambda1 theta - lambda2
    D2 theta - G(theta) plus the boundary derivative magnitudes."""
    n_steps = theta.t_grid.size - 1
    G = estimate_G(theta, p, law, n_paths, n_steps, seed)
    v = theta.values
    h = theta.dt
    d2 = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / (h * h)
    interior = p.lambda1 * v[1:-1] - p.lambda2 * d2 - G.values[1:-1]
    d0, dT = neumann_derivatives(theta)
    return float(np.max(np.abs(interior)) + np.max(d0) + np.max(dT))
