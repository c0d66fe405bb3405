import numpy as np
import pytest

import fbsde_bml as fb


def fd_gradient(func, x0, h=1e-6):
    """Central finite-difference gradient of a scalar function of a flat array."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for k in range(x0.size):
        up = x0.copy()
        dn = x0.copy()
        up.flat[k] += h
        dn.flat[k] -= h
        grad.flat[k] = (func(up) - func(dn)) / (2.0 * h)
    return grad


def tiny_net(problem, width=4, layers=1, seed=3):
    """A minimal network matched to a problem's dimensions."""
    arch = fb.NetworkArch(
        input_dim=problem.n + 1,
        hidden_layers=layers,
        hidden_width=width,
        output_dim_v=problem.m,
        output_dim_u=problem.m * problem.d,
    )
    return fb.init_network(arch, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
