import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfresnet import (
    ActivationSpec,
    ControlGrid,
    InitialLaw,
    TestFunction,
    TypeVector,
    empirical_path,
    fpk_residual,
    generator_apply,
    simulate_particles,
    wasserstein2_1d,
    wasserstein2_exact_small,
)
from mfresnet.errors import MassMismatch, SizeMismatch
from mfresnet.measures import constant_test_function, coordinate_test_function


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------

clouds = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-50, 50), min_size=n, max_size=n),
        st.lists(st.floats(-50, 50), min_size=n, max_size=n),
    )
)


@settings(max_examples=200, deadline=None)
@given(clouds)
def test_quantile_coupling_matches_exact_assignment(ab):
    a, b = ab
    fast = wasserstein2_1d(a, b)
    exact = wasserstein2_exact_small(a, b)
    assert abs(fast - exact) < 1e-9 * max(1.0, exact)


def test_w2_simple_translations():
    assert wasserstein2_1d([0.0, 1.0], [2.0, 3.0]) == pytest.approx(2.0)
    assert wasserstein2_1d([0.0], [5.0]) == pytest.approx(5.0)


def test_w2_weighted_atom_splitting_invariance():
    """Splitting an atom into two half-weight copies does not change the
    distance to any other cloud."""
    b = np.array([0.3, 1.7, -2.0])
    base = wasserstein2_1d(np.array([0.0, 1.0]), b)
    split = wasserstein2_1d(np.array([0.0, 1.0, 1.0]), b,
                            a_weights=np.array([0.5, 0.25, 0.25]))
    assert split == pytest.approx(base, abs=1e-12)


def test_w2_weight_validation():
    with pytest.raises(MassMismatch):
        wasserstein2_1d([0.0, 1.0], [0.0, 1.0], a_weights=np.array([0.5, 0.4]))


def test_exact_small_rejects_large_or_mismatched():
    with pytest.raises(SizeMismatch):
        wasserstein2_exact_small(np.zeros(9), np.zeros(9))
    with pytest.raises(SizeMismatch):
        wasserstein2_exact_small(np.zeros(3), np.zeros(4))


def test_exact_small_multidimensional():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0]])
    # optimal pairing sends (1,0) to (1,0) and (0,0) to (0,1)
    assert wasserstein2_exact_small(a, b) == pytest.approx(math.sqrt(0.5))


triples = st.integers(2, 6).flatmap(
    lambda n: st.tuples(*(st.lists(st.floats(-20, 20), min_size=n, max_size=n)
                          for _ in range(3)))
)


@settings(max_examples=200, deadline=None)
@given(triples)
def test_w2_metric_axioms(abc):
    a, b, c = abc
    dab = wasserstein2_1d(a, b)
    dba = wasserstein2_1d(b, a)
    dac = wasserstein2_1d(a, c)
    dcb = wasserstein2_1d(c, b)
    assert dab == pytest.approx(dba, abs=1e-10)
    assert wasserstein2_1d(a, a) == pytest.approx(0.0, abs=1e-10)
    assert dab <= dac + dcb + 1e-9


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def _rich_phi(d=2, q=2):
    terms = (
        (1.0, 0, (2,) + (0,) * (d - 1), (0,) * q),
        (0.5, 1, (1,) + (0,) * (d - 1), (1,) + (0,) * (q - 1)),
        (-0.7, 0, (0, 1) if d > 1 else (1,), (0, 2) if q > 1 else (2,)),
        (0.3, 2, (0,) * d, (1, 1) if q > 1 else (2,)),
    )
    return TestFunction(terms=terms, d=d, q=q, r_plateau=2.0, r_support=5.0)


def test_test_function_degree_cap():
    with pytest.raises(SizeMismatch):
        TestFunction(terms=((1.0, 3, (2,), ()),), d=1, q=0)


@pytest.mark.parametrize("point", [
    (0.4, [0.3, -0.2], [0.1, 0.5]),        # inside the plateau
    (0.7, [2.5, 1.0], [1.0, -1.5]),        # in the cutoff transition shell
])
def test_derivatives_match_finite_differences(point):
    phi = _rich_phi()
    s, x, z = point
    x = np.array([x]); z = np.array([z])
    dv = phi.derivs(s, x, z)
    h = 1e-5

    def val(ss, xx, zz):
        return float(phi.value(ss, xx, zz)[0])

    assert dv["ds"][0] == pytest.approx((val(s + h, x, z) - val(s - h, x, z)) / (2 * h), abs=1e-6)
    for i in range(2):
        xp = x.copy(); xp[0, i] += h
        xm = x.copy(); xm[0, i] -= h
        assert dv["dx"][0, i] == pytest.approx((val(s, xp, z) - val(s, xm, z)) / (2 * h), abs=1e-6)
        assert dv["dxx"][0, i, i] == pytest.approx(
            (val(s, xp, z) + val(s, xm, z) - 2 * val(s, x, z)) / h**2, abs=1e-4)
    for k in range(2):
        zp = z.copy(); zp[0, k] += h
        zm = z.copy(); zm[0, k] -= h
        assert dv["dz"][0, k] == pytest.approx((val(s, x, zp) - val(s, x, zm)) / (2 * h), abs=1e-6)
        assert dv["dzz"][0, k, k] == pytest.approx(
            (val(s, x, zp) + val(s, x, zm) - 2 * val(s, x, z)) / h**2, abs=1e-4)
        for i in range(2):
            xpp = x.copy(); xpp[0, i] += h
            xmm = x.copy(); xmm[0, i] -= h
            cross = (val(s, xpp, zp) - val(s, xpp, zm) - val(s, xmm, zp) + val(s, xmm, zm)) / (4 * h * h)
            assert dv["dzx"][0, k, i] == pytest.approx(cross, abs=1e-4)
    # off-diagonal state Hessian via four-point stencil
    xa = x.copy(); xa[0, 0] += h; xa[0, 1] += h
    xb = x.copy(); xb[0, 0] += h; xb[0, 1] -= h
    xc = x.copy(); xc[0, 0] -= h; xc[0, 1] += h
    xd = x.copy(); xd[0, 0] -= h; xd[0, 1] -= h
    cross = (val(s, xa, z) - val(s, xb, z) - val(s, xc, z) + val(s, xd, z)) / (4 * h * h)
    assert dv["dxx"][0, 0, 1] == pytest.approx(cross, abs=1e-4)


def test_cutoff_support():
    phi = coordinate_test_function(1, 0, r_plateau=1.0, r_support=2.0)
    far = phi.value(0.0, np.array([[5.0]]), np.zeros((1, 0)))
    assert far[0] == 0.0
    near = phi.value(0.0, np.array([[0.5]]), np.zeros((1, 0)))
    assert near[0] == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def test_generator_on_linear_function(scalar_params):
    """For phi = x on the plateau the generator is just the drift."""
    phi = coordinate_test_function(1, 0)
    tv = TypeVector(epsilon=np.array([[0.4]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    theta_val = np.array([0.7, -0.1])
    e = (tv, np.array([0.0]), np.zeros(0), np.array([0.8]))
    out = generator_apply(phi, 0.3, e, theta_val, 0.0, scalar_params)
    assert out == pytest.approx(math.tanh(0.7 * 0.8 - 0.1))


def test_generator_second_order_terms(coupled_params):
    """phi = x0^2 on the plateau: A phi = 2 x0 f_0 + |eps row 0|^2."""
    p = coupled_params
    phi = coordinate_test_function(2, 2, axis=0, power=2)
    tv = TypeVector(epsilon=0.2 * np.ones((2, 2)), gamma=np.array([0.5, 1.0]),
                    sigma=0.1 * np.ones((2, 2)))
    x = np.array([0.6, -0.3])
    z = np.array([0.2, 0.1])
    theta_val = np.array([0.5, 0.2])
    eta = 0.25
    out = generator_apply(phi, 0.1, (tv, np.zeros(2), z, x), theta_val, eta, p)
    f = p.activation.drift(0.1, theta_val, z[None], x[None], eta)[0]
    expected = 2.0 * x[0] * f[0] + float(np.sum(tv.epsilon[0] ** 2))
    assert out == pytest.approx(expected, rel=1e-12)


def test_generator_cross_term_matches_ito_expansion():
    """phi = x z with zero drifts isolates the mixed second-order term.  The
    one-step expectation of the product increment is eps sigma dt exactly
    (E[dW^2] = dt), so the generator value must be eps sigma with a unit
    coefficient."""
    from mfresnet import Dims, ModelParams

    p = ModelParams(activation=ActivationSpec(kind="zero"), rho="zero", phi="zero",
                    dims=Dims(d=1, q=1, p=1, m=2, l=1))
    eps, sig = 0.7, 0.4
    phi = TestFunction(terms=((1.0, 0, (1,), (1,)),), d=1, q=1,
                       r_plateau=10.0, r_support=20.0)
    tv = TypeVector(epsilon=np.array([[eps]]), gamma=np.array([0.0]),
                    sigma=np.array([[sig]]))
    out = generator_apply(phi, 0.0, (tv, np.zeros(1), np.array([0.3]), np.array([0.5])),
                          np.zeros(2), 0.0, p)
    assert out == pytest.approx(eps * sig, rel=1e-12)
    # Monte Carlo confirmation of the Ito constant
    law = InitialLaw.dirac(x0=[0.5], y0=[0.0], z0=[0.3], type_vector=tv)
    samples, types = law.sample(200000, 0)
    theta = ControlGrid.zeros(p.T, 1, k_theta=p.k_theta)
    ens = simulate_particles(p, theta, samples, types, 1, 12)
    inc = ens.X[:, 1, 0] * ens.Z[:, 1, 0] - ens.X[:, 0, 0] * ens.Z[:, 0, 0]
    dt = ens.dt
    se = np.std(inc, ddof=1) / math.sqrt(inc.size)
    assert abs(np.mean(inc) - eps * sig * dt) < 4.0 * se


# ---------------------------------------------------------------------------
# weak-form residual
# ---------------------------------------------------------------------------

def test_residual_vanishes_for_constant_function(scalar_params, scalar_law):
    samples, types = scalar_law.sample(20, 1)
    theta = ControlGrid.zeros(scalar_params.T, 16, k_theta=scalar_params.k_theta)
    ens = simulate_particles(scalar_params, theta, samples, types, 16, 1)
    phi = constant_test_function(1, 0)
    sup, res = fpk_residual(empirical_path(ens), theta, phi, scalar_params)
    assert sup < 1e-14
    assert res.shape == (17,)


def test_residual_is_discretization_bias_without_noise(scalar_params, quiet_scalar_law):
    """With zero diffusion the residual is pure Euler and quadrature error and
    shrinks as the step count grows."""
    phi = coordinate_test_function(1, 0, power=2, r_plateau=8.0, r_support=16.0)
    sups = []
    for n_steps in (16, 64, 256):
        samples, types = quiet_scalar_law.sample(50, 2)
        t = np.linspace(0.0, scalar_params.T, n_steps + 1)
        theta = ControlGrid(t, np.stack([0.5 * np.ones_like(t), 0.1 * np.ones_like(t)], axis=1),
                            k_theta=scalar_params.k_theta)
        ens = simulate_particles(scalar_params, theta, samples, types, n_steps, 2)
        sup, _ = fpk_residual(empirical_path(ens), theta, phi, scalar_params)
        sups.append(sup)
    assert sups[0] > sups[1] > sups[2]
    assert sups[2] < 1e-3


def test_mean_state_and_weights(scalar_params, scalar_law):
    samples, types = scalar_law.sample(10, 0)
    theta = ControlGrid.zeros(scalar_params.T, 4, k_theta=scalar_params.k_theta)
    ens = simulate_particles(scalar_params, theta, samples, types, 4, 0)
    path = empirical_path(ens)
    assert np.allclose(path.weights(), 0.1)
    assert np.allclose(path.mean_state(0), np.mean(ens.X[:, 0], axis=0))
