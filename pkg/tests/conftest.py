"""Shared fixtures and gradient-check helpers."""
import numpy as np
import pytest

from crossseg import tensor as T
from crossseg.config import DatasetSpec
from crossseg.data import load_split, synth_generate
from crossseg.reference import compare_grads, finite_difference_grads
from crossseg.tensor import Parameter


def param_grad_check(loss_fn, params, sample=4, seed=0, rel_tol=1e-3, step=1e-5):
    """Compare taped gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` runs a forward pass from the current parameter values and
    returns a scalar Tensor; ``params`` lists the Parameters to probe.  Only
    ``sample`` random entries per parameter are probed.  Returns the worst
    relative error and asserts it stays under ``rel_tol``.
    """
    params = list(params)
    with T.record() as tape:
        grads = tape.backward(loss_fn(), params)

    def eval_with(*probe):
        saved = [p.data for p in params]
        for p, arr in zip(params, probe):
            p.data = np.asarray(arr, dtype=p.data.dtype)
        try:
            return float(loss_fn().item())
        finally:
            for p, arr in zip(params, saved):
                p.data = arr

    rng = np.random.default_rng(seed)
    numeric = finite_difference_grads(eval_with, [p.data for p in params],
                                      step=step, sample=sample, rng=rng)
    worst = 0.0
    for p, num in zip(params, numeric):
        worst = max(worst, compare_grads(grads[p.name], num))
    assert worst < rel_tol, f"gradient mismatch: worst rel err {worst:.3e}"
    return worst


def leaf(name, data):
    """Wrap an input array as a Parameter so its gradient can be probed."""
    return Parameter(name, np.asarray(data, dtype=np.float64))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small generated dataset: 8 samples at 32x32, split 6 train / 2 test."""
    root = tmp_path_factory.mktemp("ds32")
    synth_generate(DatasetSpec(count=8, image_size=32, seed=0), root)
    return root


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return load_split(tiny_dataset, "train"), load_split(tiny_dataset, "test")
