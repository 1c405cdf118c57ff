import numpy as np
import pytest

from mfresnet import (
    ActivationSpec,
    Dims,
    InitialLaw,
    ModelParams,
    TypeVector,
)


@pytest.fixture
def scalar_params():
    """Scalar two-weight configuration with moderate costs."""
    return ModelParams(
        activation=ActivationSpec(kind="tanh"),
        rho="tanh_mean", phi="decay",
        alpha=1.0, beta=1.0, lambda1=0.1, lambda2=0.1,
        T=1.0, dims=Dims(d=1, q=0, p=1, m=2, l=0), K=10.0, k_theta=5.0,
    )


@pytest.fixture
def scalar_law():
    tv = TypeVector(epsilon=np.array([[0.3]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    return InitialLaw.uniform(
        x_low=[0.5], x_high=[1.5], y_low=[-0.5], y_high=[0.5], type_vector=tv,
    )


@pytest.fixture
def quiet_scalar_law():
    """Same marginals, zero diffusion: the dynamics are deterministic per sample."""
    tv = TypeVector(epsilon=np.array([[0.0]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    return InitialLaw.uniform(
        x_low=[0.5], x_high=[1.5], y_low=[-0.5], y_high=[0.5], type_vector=tv,
    )


@pytest.fixture
def coupled_params():
    """Multidimensional configuration with exogenous input and batch coupling."""
    return ModelParams(
        activation=ActivationSpec(kind="sigmoid", z_weight=0.3, eta_weight=0.4),
        rho="tanh_mean", phi="decay",
        alpha=1.2, beta=0.7, lambda1=0.2, lambda2=0.15,
        T=1.0, dims=Dims(d=2, q=2, p=2, m=2, l=2), K=10.0, k_theta=5.0,
    )


@pytest.fixture
def coupled_law():
    tv = TypeVector(
        epsilon=0.2 * np.ones((2, 2)),
        gamma=np.array([0.5, 1.0]),
        sigma=0.15 * np.ones((2, 2)),
    )
    return InitialLaw.uniform(
        x_low=[-1.0, -1.0], x_high=[1.0, 1.0],
        y_low=[-1.0, -1.0], y_high=[1.0, 1.0],
        z_low=[-0.5, -0.5], z_high=[0.5, 0.5],
        type_vector=tv,
    )
