import numpy as np
import pytest

from promptdiff.nn import numerical_gradient, relative_error


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_errors(module, run, backward, inputs=None, rng=None, h=1e-5):
    """Relative errors between analytic and central-difference gradients.

    ``run(cache)`` evaluates the network on fixed inputs and returns an array;
    the scalar loss is a fixed random projection of that output.
    ``backward(upstream)`` must return a dict of input gradients for the
    names listed in ``inputs`` (which maps names to the live input arrays).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs = inputs or {}
    w = rng.standard_normal(np.shape(run(False)))
    module.zero_grad()
    run(True)
    d_inputs = backward(w)
    analytic = {name: g.copy() for name, g in module.named_grads()}

    def loss():
        return float(np.sum(w * run(False)))

    errs = {name: relative_error(analytic[name], numerical_gradient(loss, p, h))
            for name, p in module.named_parameters()}
    for name, x in inputs.items():
        errs["input:" + name] = relative_error(d_inputs[name], numerical_gradient(loss, x, h))
    return errs


def max_fd_error(*args, **kwargs) -> float:
    return max(fd_errors(*args, **kwargs).values())
