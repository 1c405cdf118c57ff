"""Finite-sample training: pathwise forward sensitivities, the discrete
adjoint gradient, and projected gradient descent with Armijo backtracking.

Gradients differentiate the discretized system exactly (including the batch
coupling term), so central finite differences with common random numbers
are the ground truth they are tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NoDescentProgress, NonPositiveWeight
from .objective import CostBreakdown, evaluate_JN
from .params import ControlGrid, ModelParams, project_to_box
from .rng import noise_table, split_seed
from .sde import ParticleEnsemble, simulate_particles, stack_samples


@dataclass(frozen=True)
class TrainConfig:
    n_intervals: int = 32
    max_iters: int = 200
    step_size: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    grad_tol: float = 1e-6
    replications: int = 1
    fd_epsilon: float = 1e-5
    step_floor: float = 1e-14

    def __post_init__(self):
        if self.step_size <= 0 or self.grad_tol <= 0:
            raise NonPositiveWeight("step_size and grad_tol must be positive")
        if self.replications < 1 or self.n_intervals < 1:
            raise NonPositiveWeight("replications and n_intervals must be >= 1")


@dataclass(frozen=True)
class TrainResult:
    theta_star: ControlGrid
    history: list            # accepted CostBreakdown per iteration, index 0 = initial point
    grad_norm_final: float

    @property
    def final_value(self):
        return self.history[-1].total


def _trapezoid_weights(t_grid):
    dt = t_grid[1] - t_grid[0]
    w = np.full(t_grid.size, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def jn_pathwise(p, theta, samples, types, n_steps, seed, particle_ids=None, noise=None):
    """Single-realization sampled objective (simulate + evaluate)."""
    ens = simulate_particles(p, theta, samples, types, n_steps, seed,
                             particle_ids=particle_ids, noise=noise)
    return evaluate_JN(ens, theta, p)


def _control_cost_directional(theta: ControlGrid, direction: ControlGrid, p: ModelParams):
    w = _trapezoid_weights(theta.t_grid)
    l2 = 2.0 * p.lambda1 * float(np.sum(w[:, None] * theta.values * direction.values))
    dthe = np.diff(theta.values, axis=0)
    ddir = np.diff(direction.values, axis=0)
    h1 = 2.0 * p.lambda2 * float(np.sum(dthe * ddir) / theta.dt)
    return l2 + h1


def forward_sensitivity(ensemble: ParticleEnsemble, theta: ControlGrid,
                        direction: ControlGrid, p: ModelParams) -> float:
    """Directional derivative of the pathwise sampled objective.

    Propagates per-particle variational states through the Euler recursion,
    including the batch coupling term (each particle's sensitivity feeds the
    empirical batch statistic seen by every other particle), then chains
    into the terminal, running and control costs.
    """
    if direction.t_grid.shape != theta.t_grid.shape or not np.allclose(direction.t_grid, theta.t_grid):
        raise GridMismatch("direction must live on the control grid")
    t_grid = ensemble.t_grid
    dt = ensemble.dt
    n_steps = ensemble.n_steps
    n = ensemble.n_particles
    theta_nodes = theta.value_at(t_grid)
    dir_nodes = direction.value_at(t_grid)
    w = _trapezoid_weights(t_grid)

    err = ensemble.X - ensemble.y0[:, None, :]
    phi = np.zeros_like(ensemble.X[:, 0])    # (N, d), zero at t=0
    running = 0.0
    act = p.activation
    for k in range(n_steps):
        # running-state contribution at node k (phi holds the node-k state)
        running += w[k] * np.sum(err[:, k] * phi)
        xk = ensemble.X[:, k]
        zk = ensemble.Z[:, k]
        eta = float(np.mean(p.rho_value(xk)))
        _, dfdx, dftheta, dfeta, _ = act.drift_partials(t_grid[k], theta_nodes[k], zk, xk, eta)
        deta = float(np.mean(np.sum(p.rho_grad(xk) * phi, axis=1)))
        phi = phi + dt * (dfdx * phi + np.einsum("ndm,m->nd", dftheta, dir_nodes[k]) + dfeta * deta)
    running += w[n_steps] * np.sum(err[:, -1] * phi)

    terminal = (2.0 * p.alpha / n) * float(np.sum(err[:, -1] * phi))
    running_state = (2.0 * p.beta / n) * float(running)
    return terminal + running_state + _control_cost_directional(theta, direction, p)


def _adjoint_gradient(ensemble: ParticleEnsemble, theta: ControlGrid, p: ModelParams) -> np.ndarray:
    """Exact gradient of the pathwise objective w.r.t. the control-grid values.

    Reverse sweep of the same discrete recursion forward_sensitivity
    integrates; the two are dual and are cross-checked in the tests.
    """
    t_grid = ensemble.t_grid
    if t_grid.size != theta.t_grid.size or not np.allclose(t_grid, theta.t_grid):
        raise GridMismatch("adjoint gradient requires simulation grid == control grid")
    dt = ensemble.dt
    n_steps = ensemble.n_steps
    n = ensemble.n_particles
    w = _trapezoid_weights(t_grid)
    err = ensemble.X - ensemble.y0[:, None, :]
    act = p.activation

    grad = np.zeros_like(theta.values)
    adj = (2.0 * p.alpha / n) * err[:, -1] + w[-1] * (2.0 * p.beta / n) * err[:, -1]
    for k in range(n_steps - 1, -1, -1):
        xk = ensemble.X[:, k]
        zk = ensemble.Z[:, k]
        eta = float(np.mean(p.rho_value(xk)))
        _, dfdx, dftheta, dfeta, _ = act.drift_partials(t_grid[k], theta.values[k], zk, xk, eta)
        grad[k] += dt * np.einsum("ndm,nd->m", dftheta, adj)
        coupling = float(np.sum(dfeta * adj)) / n
        adj = (w[k] * (2.0 * p.beta / n) * err[:, k]
               + adj + dt * (dfdx * adj + coupling * p.rho_grad(xk)))

    # control costs
    grad += 2.0 * p.lambda1 * w[:, None] * theta.values
    dthe = np.diff(theta.values, axis=0) / dt
    grad[:-1] -= 2.0 * p.lambda2 * dthe
    grad[1:] += 2.0 * p.lambda2 * dthe
    return grad


def value_and_gradient(p, theta, samples, types, n_steps, seed, replications=1,
                       particle_ids=None, noises=None):
    """Objective and gradient averaged over noise replications (common random
    numbers: the same noise tables are reused for every theta)."""
    if n_steps != theta.t_grid.size - 1:
        raise GridMismatch("training requires one Euler step per control interval")
    if particle_ids is None:
        particle_ids = np.arange(len(samples))
    if noises is None:
        noises = replication_noise(p, samples, n_steps, seed, replications, particle_ids)
    parts = np.zeros(4)
    grad = np.zeros_like(theta.values)
    for noise in noises:
        ens = simulate_particles(p, theta, samples, types, n_steps, seed,
                                 particle_ids=particle_ids, noise=noise)
        bd = evaluate_JN(ens, theta, p)
        parts += np.array([bd.terminal, bd.running_state, bd.control_l2, bd.control_h1])
        grad += _adjoint_gradient(ens, theta, p)
    r = len(noises)
    parts /= r
    grad /= r
    return CostBreakdown.from_parts(*parts), grad


def replication_noise(p, samples, n_steps, seed, replications, particle_ids):
    dt = p.T / n_steps
    return [
        noise_table(split_seed(seed, f"rep{r}"), particle_ids, n_steps, dt, p.dims.p)
        for r in range(replications)
    ]


def gradient_JN(p, theta, samples, types, n_steps, seed, replications=1, particle_ids=None):
    """Gradient w.r.t. the grid values such that its plain inner product with
    any direction's grid values equals the averaged forward sensitivity."""
    _, grad = value_and_gradient(p, theta, samples, types, n_steps, seed,
                                 replications=replications, particle_ids=particle_ids)
    return grad


def _precondition(theta: ControlGrid, p: ModelParams, grad: np.ndarray) -> np.ndarray:
    """Solve M s = grad with M the control-cost Hessian (SPD tridiagonal).

    The quadratic penalty dominates the curvature and its stiffness grows
    like 1/dt^2, so plain gradient steps crawl on fine grids; scaling by M
    makes the step size mesh-independent while keeping descent directions.
    """
    import scipy.linalg

    n = theta.t_grid.size
    dt = theta.dt
    w = _trapezoid_weights(theta.t_grid)
    r = 2.0 * p.lambda2 / dt
    ab = np.zeros((3, n))
    ab[1, :] = 2.0 * p.lambda1 * w + 2.0 * r
    ab[1, 0] -= r
    ab[1, -1] -= r
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    return scipy.linalg.solve_banded((1, 1), ab, grad)


def train(p: ModelParams, samples, types, cfg: TrainConfig, seed,
          theta0: ControlGrid | None = None, particle_ids=None) -> TrainResult:
    """Projected gradient descent with Armijo backtracking on the sampled
    objective (replications averaged with common random numbers).

    Starts from the zero control by default, so the accepted history is
    non-increasing from the feasible zero-control value.
    """
    if theta0 is None:
        theta0 = ControlGrid.zeros(p.T, cfg.n_intervals, m=p.dims.m, k_theta=p.k_theta)
    theta = project_to_box(theta0)
    n_steps = theta.t_grid.size - 1
    if particle_ids is None:
        particle_ids = np.arange(len(samples))
    noises = replication_noise(p, samples, n_steps, seed, cfg.replications, particle_ids)

    def fval(th):
        parts = np.zeros(4)
        for noise in noises:
            ens = simulate_particles(p, th, samples, types, n_steps, seed,
                                     particle_ids=particle_ids, noise=noise)
            bd = evaluate_JN(ens, th, p)
            parts += np.array([bd.terminal, bd.running_state, bd.control_l2, bd.control_h1])
        return CostBreakdown.from_parts(*(parts / len(noises)))

    current, grad = value_and_gradient(p, theta, samples, types, n_steps, seed,
                                       replications=cfg.replications,
                                       particle_ids=particle_ids, noises=noises)
    history = [current]
    gnorm = float(np.linalg.norm(grad))
    for _ in range(cfg.max_iters):
        if gnorm < cfg.grad_tol:
            break
        direction = _precondition(theta, p, grad)
        step = cfg.step_size
        accepted = None
        while step >= cfg.step_floor:
            cand = project_to_box(theta.with_values(theta.values - step * direction))
            move = cand.values - theta.values
            cand_val = fval(cand)
            if cand_val.total <= current.total + cfg.armijo_c * float(np.sum(grad * move)):
                accepted = (cand, cand_val)
                break
            step *= cfg.shrink
        if accepted is None:
            raise NoDescentProgress(
                f"line search floor reached at grad_norm={gnorm:.3e}")
        theta, current = accepted
        history.append(current)
        current, grad = value_and_gradient(p, theta, samples, types, n_steps, seed,
                                           replications=cfg.replications,
                                           particle_ids=particle_ids, noises=noises)
        gnorm = float(np.linalg.norm(grad))
    return TrainResult(theta_star=theta, history=history, grad_norm_final=gnorm)
