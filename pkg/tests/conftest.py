"""Shared helpers: the central-difference gradient oracle."""

import numpy as np
import pytest

from iqfusion.autodiff import zero_grads


def analytic_gradients(loss_builder, params):
    """One forward+backward pass; returns gradients keyed by param name."""
    zero_grads(params)
    loss_builder().backward()
    return {p.name: p.grad.copy() for p in params}


def max_rel_grad_error(loss_builder, params, num_points=None, rng=None, h=1e-5):
    """Worst relative disagreement between analytic gradients and central
    finite differences, over all (or sampled) parameter entries.

    ``loss_builder`` must rebuild the forward graph deterministically on
    every call.
    """
    analytic = analytic_gradients(loss_builder, params)
    entries = [(p, idx) for p in params for idx in np.ndindex(p.data.shape)]
    if num_points is not None and num_points < len(entries):
        chosen = rng.choice(len(entries), size=num_points, replace=False)
        entries = [entries[i] for i in chosen]
    worst = 0.0
    for p, idx in entries:
        orig = p.data[idx]
        p.data[idx] = orig + h
        plus = loss_builder().item()
        p.data[idx] = orig - h
        minus = loss_builder().item()
        p.data[idx] = orig
        numeric = (plus - minus) / (2.0 * h)
        a = analytic[p.name][idx]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
