"""Domain types: dimensions, activations, control paths, model parameters.

Everything here is immutable after validation and safe to share read-only
across threads.  The drift family implemented by :class:`ActivationSpec` is

    f_r(t, theta, z, x, eta) = g(theta_1 * x_r + theta_2 + w_z * mean(z) + w_eta * eta)

applied coordinatewise, with g a bounded-derivative scalar nonlinearity.
The scalar case (d=1, q=0, w_z = w_eta = 0) is the configuration in which
the limiting control problem has a closed characterization (see fpk.py).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BoundViolation,
    DimensionMismatch,
    GridMismatch,
    GridTooSmall,
    NonPositiveWeight,
)

_ACTIVATION_KINDS = ("tanh", "sigmoid", "gaussian", "zero", "constant", "affine")
_RHO_KINDS = ("tanh_mean", "mean", "zero")
_PHI_KINDS = ("decay", "zero")


@dataclass(frozen=True)
class Dims:
    """State dimensions: d state, q exogenous input, p noise, m control, l decay parameters."""

    d: int = 1
    q: int = 0
    p: int = 1
    m: int = 2
    l: int = 0

    def validate(self):
        for name in ("d", "p", "m"):
            if getattr(self, name) < 1:
                raise DimensionMismatch(f"dims.{name} must be >= 1")
        if self.q < 0 or self.l < 0:
            raise DimensionMismatch("dims.q and dims.l must be >= 0")
        if self.q > 0 and self.l not in (1, self.q):
            raise DimensionMismatch("decay parameter length l must be 1 or q")


@dataclass(frozen=True)
class TypeVector:
    """Per-sample noise parameters (state diffusion, decay rate, input diffusion)."""

    epsilon: np.ndarray  # (d, p)
    gamma: np.ndarray    # (l,)
    sigma: np.ndarray    # (q, p)

    def __post_init__(self):
        object.__setattr__(self, "epsilon", np.atleast_2d(np.asarray(self.epsilon, dtype=float)))
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim < 2:
            sig = sig.reshape((-1, 1)) if sig.size else sig.reshape((0, 1))
        object.__setattr__(self, "sigma", sig)

    def norm(self):
        return math.sqrt(
            float(np.sum(self.epsilon ** 2) + np.sum(self.gamma ** 2) + np.sum(self.sigma ** 2))
        )

    def to_dict(self):
        return {
            "epsilon": self.epsilon.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            epsilon=np.asarray(d["epsilon"], dtype=float),
            gamma=np.asarray(d["gamma"], dtype=float),
            sigma=np.asarray(d["sigma"], dtype=float),
        )


@dataclass(frozen=True)
class TrainingSample:
    """One (input, label, exogenous-input) triple with compact support."""

    x0: np.ndarray  # (d,)
    y0: np.ndarray  # (d,)
    z0: np.ndarray  # (q,)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "y0", np.atleast_1d(np.asarray(self.y0, dtype=float)))
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float).reshape(-1))


@dataclass(frozen=True)
class ActivationSpec:
    """Scalar nonlinearity plus wiring coefficients for the drift family."""

    kind: str = "tanh"
    c: float = 0.0           # value for kind="constant"
    z_weight: float = 0.0    # coupling of mean(z) into the pre-activation
    eta_weight: float = 0.0  # coupling of the batch statistic into the pre-activation

    def __post_init__(self):
        if self.kind not in _ACTIVATION_KINDS:
            raise DimensionMismatch(f"unknown activation kind {self.kind!r}")

    # -- scalar nonlinearity ------------------------------------------------
    def _g(self, u):
        if self.kind == "tanh":
            return np.tanh(u)
        if self.kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(-u))
        if self.kind == "gaussian":
            return np.exp(-u * u)
        if self.kind == "affine":
            return u
        raise AssertionError(self.kind)

    def _g_prime(self, u):
        if self.kind == "tanh":
            t = np.tanh(u)
            return 1.0 - t * t
        if self.kind == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-u))
            return s * (1.0 - s)
        if self.kind == "gaussian":
            return -2.0 * u * np.exp(-u * u)
        if self.kind == "affine":
            return np.ones_like(u)
        raise AssertionError(self.kind)

    def g_prime_sup(self):
        return {
            "tanh": 1.0,
            "sigmoid": 0.25,
            "gaussian": math.sqrt(2.0 / math.e),
            "affine": 1.0,
            "zero": 0.0,
            "constant": 0.0,
        }[self.kind]

    def _preactivation(self, theta, z, x, eta):
        # x: (N, d); z: (N, q) or None; eta: scalar or (N,)
        u = theta[0] * x + theta[1]
        if self.z_weight != 0.0 and z is not None and z.shape[1] > 0:
            u = u + self.z_weight * np.mean(z, axis=1, keepdims=True)
        if self.eta_weight != 0.0:
            u = u + self.eta_weight * np.reshape(np.asarray(eta, dtype=float), (-1, 1))
        return u

    # -- drift and partials, vectorized over particles ----------------------
    def drift(self, t, theta, z, x, eta):
        """f(t, theta, z, x, eta) for a batch: x (N,d) -> (N,d)."""
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "constant":
            return np.full_like(x, self.c)
        return self._g(self._preactivation(theta, z, x, eta))

    def drift_partials(self, t, theta, z, x, eta):
        """Return (f, df_dx_diag, df_dtheta, df_deta, df_dz_factor).

        df_dx_diag: (N,d) diagonal of the state Jacobian (cross terms vanish);
        df_dtheta: (N,d,2); df_deta: (N,d);
        df_dz_factor: (N,d) such that d f_r / d z_k = factor_r / q for every k.
        """
        n, d = x.shape
        if self.kind in ("zero", "constant"):
            f = self.drift(t, theta, z, x, eta)
            zeros = np.zeros_like(x)
            return f, zeros, np.zeros((n, d, 2)), zeros, zeros
        u = self._preactivation(theta, z, x, eta)
        f = self._g(u)
        gp = self._g_prime(u)
        dtheta = np.stack([gp * x, gp], axis=-1)
        return f, gp * theta[0], dtheta, gp * self.eta_weight, gp * self.z_weight

    def lipschitz_constant(self, x_bound, k_theta):
        """Lipschitz constant of f in (theta, x, z, eta) jointly, valid for
        |x| <= x_bound coordinatewise and |theta| <= k_theta coordinatewise."""
        gs = self.g_prime_sup()
        if self.kind == "constant" or self.kind == "zero":
            return 0.0
        return gs * max(
            x_bound + 1.0,           # theta direction: |x| for theta_1 plus 1 for theta_2
            abs(k_theta),            # x direction
            abs(self.z_weight),
            abs(self.eta_weight),
        )

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "z_weight": self.z_weight, "eta_weight": self.eta_weight}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ControlGrid:
    """Piecewise-linear weight path on a uniform depth grid, clamped to a box."""

    t_grid: np.ndarray   # (M+1,)
    values: np.ndarray   # (M+1, m)
    k_theta: float = 10.0

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or t.size < 2:
            raise GridTooSmall("control grid needs at least two nodes")
        if v.shape[0] != t.size:
            raise DimensionMismatch("values must have one row per grid node")
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
            raise GridMismatch("grid must be uniform and increasing")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self):
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def horizon(self):
        return float(self.t_grid[-1])

    def derivative(self):
        """Per-interval constant slope, shape (M, m)."""
        return np.diff(self.values, axis=0) / self.dt

    def value_at(self, t):
        """Piecewise-linear evaluation at scalar or array t."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (self.m,))
        for j in range(self.m):
            out[..., j] = np.interp(t, self.t_grid, self.values[:, j])
        return out

    def with_values(self, values):
        return replace(self, values=np.asarray(values, dtype=float))

    def in_box(self):
        return bool(np.all(np.abs(self.values) <= self.k_theta + 1e-15))

    @classmethod
    def zeros(cls, horizon, n_intervals, m=2, k_theta=10.0):
        t = np.linspace(0.0, horizon, n_intervals + 1)
        return cls(t_grid=t, values=np.zeros((n_intervals + 1, m)), k_theta=k_theta)


def project_to_box(c: ControlGrid) -> ControlGrid:
    """Coordinatewise clamp of the weight path into [-k_theta, k_theta]."""
    clipped = np.clip(c.values, -c.k_theta, c.k_theta)
    if np.array_equal(clipped, c.values):
        return c
    return c.with_values(clipped)


def control_h1_norms(c: ControlGrid):
    """(trapezoid of |theta|^2, exact integral of |theta'|^2 for the
    piecewise-linear representative)."""
    if c.t_grid.size < 2:
        raise GridTooSmall("need at least two grid points")
    sq = np.sum(c.values ** 2, axis=1)
    l2_sq = float(np.trapezoid(sq, c.t_grid))
    dv = np.diff(c.values, axis=0)
    h1_semi_sq = float(np.sum(dv ** 2) / c.dt)
    return l2_sq, h1_semi_sq


@dataclass(frozen=True)
class ModelParams:
    """Full model specification: drift family, batch/decay functions, cost weights."""

    activation: ActivationSpec = field(default_factory=ActivationSpec)
    rho: str = "tanh_mean"
    phi: str = "decay"
    alpha: float = 1.0
    beta: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    T: float = 1.0
    dims: Dims = field(default_factory=Dims)
    K: float = 10.0        # compact support bound for samples and type vectors
    k_theta: float = 10.0  # half-width of the control box

    def __post_init__(self):
        if self.rho not in _RHO_KINDS:
            raise DimensionMismatch(f"unknown batch function {self.rho!r}")
        if self.phi not in _PHI_KINDS:
            raise DimensionMismatch(f"unknown exogenous drift {self.phi!r}")

    # -- batch function rho and its gradient --------------------------------
    def rho_value(self, x):
        """rho applied rowwise: x (N,d) -> (N,)."""
        if self.rho == "zero":
            return np.zeros(x.shape[0])
        if self.rho == "mean":
            return np.mean(x, axis=1)
        return np.mean(np.tanh(x), axis=1)

    def rho_grad(self, x):
        """Gradient of rho rowwise: (N,d)."""
        d = x.shape[1]
        if self.rho == "zero":
            return np.zeros_like(x)
        if self.rho == "mean":
            return np.full_like(x, 1.0 / d)
        t = np.tanh(x)
        return (1.0 - t * t) / d

    # -- exogenous drift phi(gamma, z) ---------------------------------------
    def phi_value(self, gamma, z):
        """phi rowwise: gamma (N,l), z (N,q) -> (N,q)."""
        if self.phi == "zero" or z.shape[1] == 0:
            return np.zeros_like(z)
        if gamma.shape[1] == 1:
            return -gamma * z
        return -gamma * z

    def is_scalar_two_weight(self):
        """Scalar state, two control weights, no exogenous input, no batch coupling."""
        a = self.activation
        return (
            self.dims.d == 1
            and self.dims.m == 2
            and self.dims.q == 0
            and a.kind in ("tanh", "sigmoid", "gaussian", "zero", "affine")
            and a.z_weight == 0.0
            and a.eta_weight == 0.0
        )

    def to_dict(self):
        return {
            "activation": self.activation.to_dict(),
            "rho": self.rho,
            "phi": self.phi,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "T": self.T,
            "dims": {"d": self.dims.d, "q": self.dims.q, "p": self.dims.p, "m": self.dims.m, "l": self.dims.l},
            "K": self.K,
            "k_theta": self.k_theta,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["activation"] = ActivationSpec.from_dict(d["activation"])
        d["dims"] = Dims(**d["dims"])
        return cls(**d)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def validate_params(p: ModelParams) -> ModelParams:
    """Check positivity of weights, dimension consistency and wiring constraints.

    Returns the same (immutable) params on success; raises otherwise.
    """
    for name in ("alpha", "beta", "lambda1", "lambda2", "T"):
        v = getattr(p, name)
        if not (v > 0.0) or not math.isfinite(v):
            raise NonPositiveWeight(f"{name} must be positive and finite, got {v}")
    if p.K <= 0 or p.k_theta <= 0:
        raise BoundViolation("bounds K and k_theta must be positive")
    p.dims.validate()
    if p.activation.kind not in ("zero", "constant") and p.dims.m != 2:
        raise DimensionMismatch("the scalar-nonlinearity drift family uses m=2 control weights")
    if p.activation.z_weight != 0.0 and p.dims.q == 0:
        raise DimensionMismatch("z_weight wiring requires q >= 1")
    return p


def check_sample(p: ModelParams, s: TrainingSample) -> TrainingSample:
    if s.x0.shape != (p.dims.d,) or s.y0.shape != (p.dims.d,) or s.z0.shape != (p.dims.q,):
        raise DimensionMismatch("sample shapes do not match dims")
    if np.max(np.abs(np.concatenate([s.x0, s.y0, s.z0]))) > p.K:
        raise BoundViolation(f"sample outside the support box [-{p.K}, {p.K}]")
    return s


def check_type(p: ModelParams, t: TypeVector) -> TypeVector:
    if t.epsilon.shape != (p.dims.d, p.dims.p):
        raise DimensionMismatch("epsilon must be (d, p)")
    if t.sigma.shape != (p.dims.q, p.dims.p):
        raise DimensionMismatch("sigma must be (q, p)")
    if t.gamma.shape != (p.dims.l,):
        raise DimensionMismatch("gamma must be (l,)")
    if not np.all(np.isfinite(t.epsilon)) or not np.all(np.isfinite(t.gamma)) or not np.all(np.isfinite(t.sigma)):
        raise BoundViolation("type vector entries must be finite")
    if t.norm() > p.K:
        raise BoundViolation(f"type vector norm {t.norm():.3g} exceeds K={p.K}")
    return t


def eval_drift(p: ModelParams, t, theta, z, x, eta):
    """Pointwise drift evaluation: theta (m,), z (q,), x (d,), eta scalar -> (d,)."""
    theta = np.asarray(theta, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    if x.shape != (p.dims.d,):
        raise DimensionMismatch("x must have length d")
    if z.shape != (p.dims.q,):
        raise DimensionMismatch("z must have length q")
    if p.activation.kind not in ("zero", "constant") and theta.shape != (p.dims.m,):
        raise DimensionMismatch("theta must have length m")
    return p.activation.drift(t, theta, z[None, :], x[None, :], float(eta))[0]


@dataclass(frozen=True)
class InitialLaw:
    """Sampling recipe for i.i.d. training data, plus the shared type vector.

    kind="uniform": coordinates of (x0, y0, z0) drawn uniformly from the given
    per-block intervals (a sub-box of the support box).
    kind="dirac": every sample equals the given point.
    """

    kind: str
    x_low: np.ndarray
    x_high: np.ndarray
    y_low: np.ndarray
    y_high: np.ndarray
    z_low: np.ndarray
    z_high: np.ndarray
    type_vector: TypeVector

    def __post_init__(self):
        for name in ("x_low", "x_high", "y_low", "y_high", "z_low", "z_high"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.kind not in ("uniform", "dirac"):
            raise ConfigError(f"unknown initial law kind {self.kind!r}")

    @classmethod
    def uniform(cls, x_low, x_high, y_low, y_high, type_vector, z_low=(), z_high=()):
        return cls("uniform", x_low, x_high, y_low, y_high, np.asarray(z_low, dtype=float),
                   np.asarray(z_high, dtype=float), type_vector)

    @classmethod
    def dirac(cls, x0, y0, type_vector, z0=()):
        z0 = np.asarray(z0, dtype=float)
        return cls("dirac", x0, x0, y0, y0, z0, z0, type_vector)

    def sample(self, n, seed):
        """Draw n samples deterministically from seed; returns (samples, types)."""
        from .rng import make_generator

        gen = make_generator(seed, "initial-law")
        d = self.x_low.size
        q = self.z_low.size
        if self.kind == "dirac":
            x = np.tile(self.x_low, (n, 1))
            y = np.tile(self.y_low, (n, 1))
            z = np.tile(self.z_low, (n, 1))
        else:
            x = gen.uniform(self.x_low, self.x_high, size=(n, d))
            y = gen.uniform(self.y_low, self.y_high, size=(n, d))
            z = gen.uniform(self.z_low, self.z_high, size=(n, q)) if q else np.zeros((n, 0))
        samples = [TrainingSample(x[i], y[i], z[i]) for i in range(n)]
        types = [self.type_vector] * n
        return samples, types

    def to_dict(self):
        return {
            "kind": self.kind,
            "x_low": self.x_low.tolist(), "x_high": self.x_high.tolist(),
            "y_low": self.y_low.tolist(), "y_high": self.y_high.tolist(),
            "z_low": self.z_low.tolist(), "z_high": self.z_high.tolist(),
            "type_vector": self.type_vector.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["type_vector"] = TypeVector.from_dict(d["type_vector"])
        return cls(**d)


class ConfigError(DimensionMismatch):
    pass
