import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfresnet import (
    ActivationSpec,
    ControlGrid,
    Dims,
    InitialLaw,
    ModelParams,
    TrainingSample,
    TypeVector,
    control_h1_norms,
    eval_drift,
    project_to_box,
    validate_params,
)
from mfresnet.errors import (
    BoundViolation,
    DimensionMismatch,
    GridMismatch,
    NonPositiveWeight,
)
from mfresnet.params import check_sample, check_type


# ---------------------------------------------------------------------------
# dims and validation
# ---------------------------------------------------------------------------

def test_dims_validate_rejects_bad_values():
    with pytest.raises(DimensionMismatch):
        Dims(d=0).validate()
    with pytest.raises(DimensionMismatch):
        Dims(q=-1).validate()
    with pytest.raises(DimensionMismatch):
        Dims(q=3, l=2).validate()
    Dims(q=3, l=1).validate()
    Dims(q=3, l=3).validate()


def test_validate_params_rejects_nonpositive_weights(scalar_params):
    import dataclasses

    for name in ("alpha", "beta", "lambda1", "lambda2", "T"):
        bad = dataclasses.replace(scalar_params, **{name: 0.0})
        with pytest.raises(NonPositiveWeight):
            validate_params(bad)


def test_validate_params_rejects_bad_wiring():
    act = ActivationSpec(kind="tanh", z_weight=0.5)
    p = ModelParams(activation=act, dims=Dims(d=1, q=0, p=1, m=2, l=0))
    with pytest.raises(DimensionMismatch):
        validate_params(p)


def test_check_sample_and_type_bounds(scalar_params):
    good = TrainingSample(x0=[1.0], y0=[0.0], z0=[])
    assert check_sample(scalar_params, good) is good
    with pytest.raises(BoundViolation):
        check_sample(scalar_params, TrainingSample(x0=[100.0], y0=[0.0], z0=[]))
    with pytest.raises(DimensionMismatch):
        check_sample(scalar_params, TrainingSample(x0=[1.0, 2.0], y0=[0.0], z0=[]))
    tv = TypeVector(epsilon=np.array([[0.3]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    assert check_type(scalar_params, tv) is tv
    with pytest.raises(BoundViolation):
        check_type(scalar_params, TypeVector(epsilon=np.array([[100.0]]),
                                             gamma=np.zeros(0), sigma=np.zeros((0, 1))))


# ---------------------------------------------------------------------------
# activation family
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "gaussian", "affine"])
def test_g_prime_matches_finite_differences(kind):
    act = ActivationSpec(kind=kind)
    u = np.linspace(-3.0, 3.0, 41)
    h = 1e-6
    fd = (act._g(u + h) - act._g(u - h)) / (2.0 * h)
    assert np.max(np.abs(fd - act._g_prime(u))) < 1e-8


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "gaussian", "affine"])
def test_g_prime_sup_is_an_upper_bound(kind):
    act = ActivationSpec(kind=kind)
    u = np.linspace(-10.0, 10.0, 2001)
    assert np.max(np.abs(act._g_prime(u))) <= act.g_prime_sup() + 1e-12


def test_drift_partials_match_finite_differences():
    act = ActivationSpec(kind="tanh", z_weight=0.3, eta_weight=0.4)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 2))
    z = rng.normal(size=(5, 3))
    theta = np.array([0.7, -0.2])
    eta = 0.3
    f, dfdx, dftheta, dfeta, dfz = act.drift_partials(0.0, theta, z, x, eta)
    h = 1e-6
    # state derivative (diagonal)
    for r in range(2):
        xp = x.copy(); xp[:, r] += h
        xm = x.copy(); xm[:, r] -= h
        fd = (act.drift(0.0, theta, z, xp, eta) - act.drift(0.0, theta, z, xm, eta)) / (2 * h)
        assert np.allclose(fd[:, r], dfdx[:, r], atol=1e-7)
        off = np.delete(fd, r, axis=1)
        assert np.max(np.abs(off)) < 1e-7
    # control derivatives
    for j in range(2):
        tp = theta.copy(); tp[j] += h
        tm = theta.copy(); tm[j] -= h
        fd = (act.drift(0.0, tp, z, x, eta) - act.drift(0.0, tm, z, x, eta)) / (2 * h)
        assert np.allclose(fd, dftheta[:, :, j], atol=1e-7)
    # batch statistic derivative
    fd = (act.drift(0.0, theta, z, x, eta + h) - act.drift(0.0, theta, z, x, eta - h)) / (2 * h)
    assert np.allclose(fd, dfeta, atol=1e-7)
    # exogenous input derivative (enters through its mean)
    zp = z.copy(); zp[:, 1] += h
    zm = z.copy(); zm[:, 1] -= h
    fd = (act.drift(0.0, theta, zp, x, eta) - act.drift(0.0, theta, zm, x, eta)) / (2 * h)
    assert np.allclose(fd, dfz / z.shape[1], atol=1e-7)


def test_zero_and_constant_kinds():
    x = np.ones((3, 2))
    z = np.zeros((3, 0))
    zero = ActivationSpec(kind="zero")
    const = ActivationSpec(kind="constant", c=0.7)
    assert np.all(zero.drift(0.0, np.zeros(2), z, x, 0.0) == 0.0)
    assert np.all(const.drift(0.0, np.zeros(2), z, x, 0.0) == 0.7)
    assert zero.lipschitz_constant(1.0, 1.0) == 0.0


def test_eval_drift_matches_batched(scalar_params):
    theta = np.array([0.5, -0.3])
    out = eval_drift(scalar_params, 0.0, theta, [], [0.8], 0.0)
    expected = np.tanh(0.5 * 0.8 - 0.3)
    assert np.allclose(out, [expected])


# ---------------------------------------------------------------------------
# control grid
# ---------------------------------------------------------------------------

def test_control_grid_interpolation():
    t = np.linspace(0.0, 1.0, 5)
    vals = np.stack([t, 2 * t], axis=1)
    c = ControlGrid(t, vals)
    assert np.allclose(c.value_at(0.125), [0.125, 0.25])
    assert np.allclose(c.value_at(t), vals)
    assert np.allclose(c.derivative(), np.tile([1.0, 2.0], (4, 1)))


def test_control_grid_rejects_nonuniform():
    with pytest.raises(GridMismatch):
        ControlGrid(np.array([0.0, 0.1, 0.5]), np.zeros((3, 2)))


def test_project_to_box_clamps():
    c = ControlGrid(np.linspace(0, 1, 3), np.array([[3.0, -3.0], [0.5, 0.0], [1.0, 1.0]]),
                    k_theta=1.0)
    proj = project_to_box(c)
    assert proj.in_box()
    assert np.allclose(proj.values, [[1.0, -1.0], [0.5, 0.0], [1.0, 1.0]])
    # already-feasible grids are returned unchanged
    assert project_to_box(proj) is proj


def test_control_h1_norms_linear_path():
    t = np.linspace(0.0, 2.0, 9)
    c = ControlGrid(t, np.stack([3.0 * t, np.zeros_like(t)], axis=1))
    l2_sq, h1_sq = control_h1_norms(c)
    # trapezoid rule is exact-ish for t^2 up to the standard h^2 correction
    assert abs(l2_sq - 24.0) < 0.6
    assert abs(h1_sq - 18.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 20), st.floats(0.1, 5.0))
def test_h1_norms_nonnegative_and_zero_for_constant(n_nodes, horizon):
    t = np.linspace(0.0, horizon, n_nodes)
    c = ControlGrid(t, np.full((n_nodes, 2), 0.7))
    l2_sq, h1_sq = control_h1_norms(c)
    assert l2_sq >= 0.0 and h1_sq == 0.0
    assert abs(l2_sq - 2 * 0.49 * horizon) < 1e-9


# ---------------------------------------------------------------------------
# serialization and initial laws
# ---------------------------------------------------------------------------

def test_model_params_roundtrip(coupled_params, tmp_path):
    d = coupled_params.to_dict()
    again = ModelParams.from_dict(d)
    assert again == coupled_params
    path = tmp_path / "model.json"
    coupled_params.to_json(path)
    assert ModelParams.from_json(path) == coupled_params


def test_initial_law_roundtrip_and_determinism(coupled_law):
    again = InitialLaw.from_dict(coupled_law.to_dict())
    s1, t1 = again.sample(7, 42)
    s2, t2 = coupled_law.sample(7, 42)
    for a, b in zip(s1, s2):
        assert np.array_equal(a.x0, b.x0)
        assert np.array_equal(a.y0, b.y0)
        assert np.array_equal(a.z0, b.z0)
    assert t1[0].norm() == t2[0].norm()


def test_uniform_law_respects_bounds(coupled_law):
    samples, _ = coupled_law.sample(200, 3)
    x = np.stack([s.x0 for s in samples])
    z = np.stack([s.z0 for s in samples])
    assert np.all(x >= -1.0) and np.all(x <= 1.0)
    assert np.all(z >= -0.5) and np.all(z <= 0.5)


def test_dirac_law_is_constant():
    tv = TypeVector(epsilon=np.array([[0.1]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    law = InitialLaw.dirac(x0=[1.0], y0=[0.5], type_vector=tv)
    samples, _ = law.sample(5, 0)
    for s in samples:
        assert np.array_equal(s.x0, [1.0])
        assert np.array_equal(s.y0, [0.5])
