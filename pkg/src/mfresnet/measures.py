"""Empirical measure paths, Wasserstein distances, the generator of the
state dynamics, and the weak-form FPK residual diagnostic.

Test functions are polynomials (degree <= 4 in time, state and exogenous
input) multiplied by a C^2 radial cutoff whose plateau is meant to cover
the simulated support, so that all derivatives are available in closed
form and plateau-covered cases are exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, MassMismatch, SizeMismatch
from .params import ControlGrid, ModelParams, TypeVector
from .sde import ParticleEnsemble


# ---------------------------------------------------------------------------
# empirical measure path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMeasurePath:
    """Uniformly weighted atoms (type, label, input, state) at every depth node."""

    t_grid: np.ndarray
    X: np.ndarray      # (N, S+1, d)
    Z: np.ndarray      # (N, S+1, q)
    y0: np.ndarray     # (N, d)
    eps: np.ndarray    # (N, d, p)
    gamma: np.ndarray  # (N, l)
    sigma: np.ndarray  # (N, q, p)

    @property
    def n_atoms(self):
        return self.X.shape[0]

    def weights(self):
        n = self.n_atoms
        return np.full(n, 1.0 / n)

    def mean_state(self, node):
        """<mu(t), x> at grid node index `node`."""
        return np.mean(self.X[:, node, :], axis=0)


def empirical_path(ensemble: ParticleEnsemble) -> EmpiricalMeasurePath:
    return EmpiricalMeasurePath(
        t_grid=ensemble.t_grid, X=ensemble.X, Z=ensemble.Z, y0=ensemble.y0,
        eps=ensemble.eps, gamma=ensemble.gamma, sigma=ensemble.sigma,
    )


# ---------------------------------------------------------------------------
# Wasserstein-2 distances
# ---------------------------------------------------------------------------

def wasserstein2_1d(a, b, a_weights=None, b_weights=None) -> float:
    """Quadratic Wasserstein distance between weighted samples on the line.

    Quantile coupling (exact in one dimension): sort both supports and
    integrate squared quantile differences over the common mass axis.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    wa = np.full(a.size, 1.0 / a.size) if a_weights is None else np.asarray(a_weights, dtype=float)
    wb = np.full(b.size, 1.0 / b.size) if b_weights is None else np.asarray(b_weights, dtype=float)
    if abs(wa.sum() - 1.0) > 1e-9 or abs(wb.sum() - 1.0) > 1e-9:
        raise MassMismatch("weights must sum to one on both sides")
    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    a, wa = a[ia], wa[ia]
    b, wb = b[ib], wb[ib]
    cw_a = np.cumsum(wa)
    cw_b = np.cumsum(wb)
    cuts = np.sort(np.concatenate([cw_a, cw_b]))
    cuts[-1] = 1.0
    seg = np.diff(np.concatenate([[0.0], cuts]))
    mid = cuts - 0.5 * seg
    qa = a[np.minimum(np.searchsorted(cw_a, mid), a.size - 1)]
    qb = b[np.minimum(np.searchsorted(cw_b, mid), b.size - 1)]
    return float(math.sqrt(max(np.sum(seg * (qa - qb) ** 2), 0.0)))


def wasserstein2_exact_small(a, b) -> float:
    """Exact W2 between two equal-size clouds of <= 8 equally weighted points
    by brute-force assignment; the oracle the fast paths are tested against."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if a.shape != b.shape:
        raise SizeMismatch("clouds must have identical shapes")
    n = a.shape[0]
    if n > 8:
        raise SizeMismatch("exact assignment limited to 8 points")
    pair_cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)  # (n, n)
    perms = np.array(list(itertools.permutations(range(n))))
    costs = pair_cost[np.arange(n), perms].sum(axis=1)
    return math.sqrt(float(costs.min()) / n)


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def _smoothstep(u):
    return 6.0 * u**5 - 15.0 * u**4 + 10.0 * u**3


def _smoothstep_d1(u):
    return 30.0 * u**4 - 60.0 * u**3 + 30.0 * u**2


def _smoothstep_d2(u):
    return 120.0 * u**3 - 180.0 * u**2 + 60.0 * u


@dataclass(frozen=True)
class TestFunction:
    """Polynomial-times-cutoff test function with closed-form derivatives.

    terms: tuple of (coeff, s_power, x_powers, z_powers); total degree <= 4.
    The cutoff equals 1 where |(x,z) - center|^2 <= r_plateau^2 and 0 where
    it exceeds r_support^2, with a C^2 quintic transition in between.
    """

    terms: tuple
    d: int
    q: int
    center: np.ndarray = None
    r_plateau: float = 10.0
    r_support: float = 20.0

    def __post_init__(self):
        if self.center is None:
            object.__setattr__(self, "center", np.zeros(self.d + self.q))
        else:
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        for coeff, s_pow, x_pows, z_pows in self.terms:
            if len(x_pows) != self.d or len(z_pows) != self.q:
                raise SizeMismatch("term powers must match (d, q)")
            if s_pow + sum(x_pows) + sum(z_pows) > 4:
                raise SizeMismatch("polynomial degree must be <= 4")
        if not (0 < self.r_plateau < self.r_support):
            raise SizeMismatch("need 0 < r_plateau < r_support")

    # -- polynomial part ----------------------------------------------------
    def _poly(self, s, x, z):
        """Value and derivatives of the polynomial factor, vectorized over rows."""
        n = x.shape[0]
        val = np.zeros(n)
        ds = np.zeros(n)
        dx = np.zeros((n, self.d))
        dz = np.zeros((n, self.q))
        dxx = np.zeros((n, self.d, self.d))
        dzz = np.zeros((n, self.q, self.q))
        dzx = np.zeros((n, self.q, self.d))

        def mono(vals, pows, skip=()):
            out = np.ones(n)
            for j, pw in enumerate(pows):
                if j in skip or pw == 0:
                    continue
                out = out * vals[:, j] ** pw
            return out

        for coeff, s_pow, x_pows, z_pows in self.terms:
            s_fac = s ** s_pow
            px = mono(x, x_pows)
            pz = mono(z, z_pows)
            val += coeff * s_fac * px * pz
            if s_pow > 0:
                ds += coeff * s_pow * s ** (s_pow - 1) * px * pz
            for i in range(self.d):
                if x_pows[i] == 0:
                    continue
                dxi = x_pows[i] * x[:, i] ** (x_pows[i] - 1) * mono(x, x_pows, skip=(i,))
                dx[:, i] += coeff * s_fac * dxi * pz
                for j in range(i, self.d):
                    if j == i:
                        if x_pows[i] >= 2:
                            dd = x_pows[i] * (x_pows[i] - 1) * x[:, i] ** (x_pows[i] - 2) * mono(x, x_pows, skip=(i,))
                            dxx[:, i, i] += coeff * s_fac * dd * pz
                    elif x_pows[j] > 0:
                        dd = (x_pows[i] * x[:, i] ** (x_pows[i] - 1)
                              * x_pows[j] * x[:, j] ** (x_pows[j] - 1)
                              * mono(x, x_pows, skip=(i, j)))
                        dxx[:, i, j] += coeff * s_fac * dd * pz
                        dxx[:, j, i] += coeff * s_fac * dd * pz
            for k in range(self.q):
                if z_pows[k] == 0:
                    continue
                dzk = z_pows[k] * z[:, k] ** (z_pows[k] - 1) * mono(z, z_pows, skip=(k,))
                dz[:, k] += coeff * s_fac * px * dzk
                for l in range(k, self.q):
                    if l == k:
                        if z_pows[k] >= 2:
                            dd = z_pows[k] * (z_pows[k] - 1) * z[:, k] ** (z_pows[k] - 2) * mono(z, z_pows, skip=(k,))
                            dzz[:, k, k] += coeff * s_fac * px * dd
                    elif z_pows[l] > 0:
                        dd = (z_pows[k] * z[:, k] ** (z_pows[k] - 1)
                              * z_pows[l] * z[:, l] ** (z_pows[l] - 1)
                              * mono(z, z_pows, skip=(k, l)))
                        dzz[:, k, l] += coeff * s_fac * px * dd
                        dzz[:, l, k] += coeff * s_fac * px * dd
                for i in range(self.d):
                    if x_pows[i] == 0:
                        continue
                    dd = (x_pows[i] * x[:, i] ** (x_pows[i] - 1) * mono(x, x_pows, skip=(i,)) * dzk)
                    dzx[:, k, i] += coeff * s_fac * dd
        return val, ds, dx, dz, dxx, dzz, dzx

    # -- cutoff part ---------------------------------------------------------
    def _bump(self, x, z):
        n = x.shape[0]
        u = np.concatenate([x, z], axis=1) - self.center[None, :]
        r2 = np.sum(u * u, axis=1)
        lo2 = self.r_plateau**2
        hi2 = self.r_support**2
        denom = hi2 - lo2
        w = (r2 - lo2) / denom
        inside = w <= 0.0
        outside = w >= 1.0
        trans = ~inside & ~outside
        b = np.where(inside, 1.0, 0.0)
        psi1 = np.zeros(n)
        psi2 = np.zeros(n)
        if np.any(trans):
            wt = np.clip(w, 0.0, 1.0)
            b = np.where(trans, 1.0 - _smoothstep(wt), b)
            psi1 = np.where(trans, -_smoothstep_d1(wt), 0.0)
            psi2 = np.where(trans, -_smoothstep_d2(wt), 0.0)
        grad = psi1[:, None] * 2.0 * u / denom                       # (N, d+q)
        hess = (psi2[:, None, None] * 4.0 * u[:, :, None] * u[:, None, :] / denom**2
                + psi1[:, None, None] * (2.0 / denom) * np.eye(self.d + self.q)[None])
        return b, grad, hess

    def derivs(self, s, x, z):
        """All derivatives needed by the generator, vectorized over atoms.

        Returns dict with val, ds, dx (N,d), dz (N,q), dxx (N,d,d),
        dzz (N,q,q), dzx (N,q,d).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z, dtype=float)
        if z.ndim < 2:
            z = z.reshape(x.shape[0], self.q)
        pval, pds, pdx, pdz, pdxx, pdzz, pdzx = self._poly(s, x, z)
        b, bg, bh = self._bump(x, z)
        d = self.d
        bgx, bgz = bg[:, :d], bg[:, d:]
        bhxx, bhzz = bh[:, :d, :d], bh[:, d:, d:]
        bhzx = bh[:, d:, :d]
        val = pval * b
        ds = pds * b
        dx = pdx * b[:, None] + pval[:, None] * bgx
        dz = pdz * b[:, None] + pval[:, None] * bgz
        dxx = (pdxx * b[:, None, None]
               + pdx[:, :, None] * bgx[:, None, :]
               + bgx[:, :, None] * pdx[:, None, :]
               + pval[:, None, None] * bhxx)
        dzz = (pdzz * b[:, None, None]
               + pdz[:, :, None] * bgz[:, None, :]
               + bgz[:, :, None] * pdz[:, None, :]
               + pval[:, None, None] * bhzz)
        dzx = (pdzx * b[:, None, None]
               + pdz[:, :, None] * bgx[:, None, :]
               + bgz[:, :, None] * pdx[:, None, :]
               + pval[:, None, None] * bhzx)
        return {"val": val, "ds": ds, "dx": dx, "dz": dz, "dxx": dxx, "dzz": dzz, "dzx": dzx}

    def value(self, s, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z, dtype=float)
        if z.ndim < 2:
            z = z.reshape(x.shape[0], self.q)
        pval = self._poly(s, x, z)[0]
        return pval * self._bump(x, z)[0]


def coordinate_test_function(d, q, axis=0, power=1, r_plateau=10.0, r_support=20.0):
    """phi = x_axis^power times the cutoff."""
    x_pows = tuple(power if j == axis else 0 for j in range(d))
    return TestFunction(terms=((1.0, 0, x_pows, (0,) * q),), d=d, q=q,
                        r_plateau=r_plateau, r_support=r_support)


def constant_test_function(d, q, r_plateau=10.0, r_support=20.0):
    """phi = 1 on the plateau (all derivatives vanish there)."""
    return TestFunction(terms=((1.0, 0, (0,) * d, (0,) * q),), d=d, q=q,
                        r_plateau=r_plateau, r_support=r_support)


# ---------------------------------------------------------------------------
# generator and FPK residual
# ---------------------------------------------------------------------------

def generator_apply_batch(phi: TestFunction, s, x, z, eps, gamma, sigma,
                          theta_val, eta, p: ModelParams) -> np.ndarray:
    """Generator applied to phi at each atom, vectorized: returns (N,).

    Sum of the time derivative, the drift and exogenous-drift first-order
    terms, and the diffusion second-order terms.  The mixed state/input
    term carries a unit coefficient: the two off-diagonal Hessian blocks of
    the joint diffusion are equal, and folding them into one trace leaves
    no factor one half (checked against the Ito expansion in the tests).
    """
    dv = phi.derivs(s, x, z)
    f = p.activation.drift(s, theta_val, z, x, eta)
    out = dv["ds"] + np.einsum("nd,nd->n", f, dv["dx"])
    if phi.q:
        phid = p.phi_value(gamma, z)
        out = out + np.einsum("nq,nq->n", phid, dv["dz"])
        out = out + 0.5 * np.einsum("nkp,nlp,nkl->n", sigma, sigma, dv["dzz"])
        out = out + np.einsum("ndp,nqp,nqd->n", eps, sigma, dv["dzx"])
    out = out + 0.5 * np.einsum("ndp,nep,nde->n", eps, eps, dv["dxx"])
    return out


def generator_apply(phi: TestFunction, s, e, theta_val, eta, p: ModelParams) -> float:
    """Pointwise generator evaluation; e = (type_vector, y, z, x)."""
    tv, _y, z, x = e
    if not isinstance(tv, TypeVector):
        raise SizeMismatch("e must be (TypeVector, y, z, x)")
    x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    z = np.asarray(z, dtype=float).reshape(1, -1)
    out = generator_apply_batch(
        phi, s, x, z, tv.epsilon[None], tv.gamma[None], tv.sigma[None],
        np.asarray(theta_val, dtype=float), float(eta), p,
    )
    return float(out[0])


def fpk_residual(path: EmpiricalMeasurePath, theta: ControlGrid, phi: TestFunction,
                 p: ModelParams):
    """Weak-form residual R(t) = <mu(t), phi(t)> - <mu(0), phi(0)> -
    trapezoid integral of <mu(s), A phi(s)>; returns (sup |R|, R path)."""
    t_grid = path.t_grid
    if abs(theta.horizon - t_grid[-1]) > 1e-12 * max(1.0, t_grid[-1]):
        raise GridMismatch("control and measure paths must share the horizon")
    theta_nodes = theta.value_at(t_grid)
    n_nodes = t_grid.size
    mean_phi = np.empty(n_nodes)
    mean_gen = np.empty(n_nodes)
    for k in range(n_nodes):
        xk = path.X[:, k]
        zk = path.Z[:, k]
        eta = float(np.mean(p.rho_value(xk)))
        mean_phi[k] = float(np.mean(phi.value(t_grid[k], xk, zk)))
        mean_gen[k] = float(np.mean(generator_apply_batch(
            phi, t_grid[k], xk, zk, path.eps, path.gamma, path.sigma,
            theta_nodes[k], eta, p)))
    dt = t_grid[1] - t_grid[0]
    cumint = np.concatenate([[0.0], np.cumsum(0.5 * dt * (mean_gen[1:] + mean_gen[:-1]))])
    residual = mean_phi - mean_phi[0] - cumint
    return float(np.max(np.abs(residual))), residual
