"""Shared fixtures and numerical oracles for the test suite."""

import numpy as np
import pytest

from protoscale.tensor import Tensor

# Central-difference step and the relative tolerance every analytic
# gradient must meet against it.
FD_STEP = 1e-5
FD_RTOL = 1e-4


def numeric_gradient(fn, arrays, h=FD_STEP):
    """Central-difference gradients of scalar ``fn`` w.r.t. each input array.

    ``fn`` maps a list of ndarrays to a float and must be deterministic.
    Returns one ndarray of the same shape per input.
    """
    grads = []
    for which, base in enumerate(arrays):
        grad = np.zeros_like(base, dtype=np.float64)
        flat = grad.reshape(-1)
        base_flat = base.reshape(-1)
        for i in range(base_flat.size):
            orig = base_flat[i]
            base_flat[i] = orig + h
            hi = fn(arrays)
            base_flat[i] = orig - h
            lo = fn(arrays)
            base_flat[i] = orig
            flat[i] = (hi - lo) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric):
    """max |a - n| scaled by the numeric gradient's magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.abs(numeric).max() + 1e-12
    return np.abs(analytic - numeric).max() / scale


def check_gradients(build_loss, arrays, h=FD_STEP, rtol=FD_RTOL):
    """Assert analytic gradients of ``build_loss`` match central differences.

    ``build_loss`` maps a list of Tensors to a scalar Tensor; it is called
    once with requires_grad leaves for the analytic pass and repeatedly on
    raw arrays for the numeric one.
    """
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(leaves)
    loss.backward()

    def scalar_fn(raw):
        return build_loss([Tensor(r) for r in raw]).item()

    numeric = numeric_gradient(scalar_fn, [a.copy() for a in arrays], h=h)
    for leaf, num, arr in zip(leaves, numeric, arrays):
        err = relative_error(leaf.grad, num)
        assert err < rtol, (
            f"gradient mismatch for input of shape {arr.shape}: "
            f"relative error {err:.3e} >= {rtol}"
        )
    return loss.item()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
