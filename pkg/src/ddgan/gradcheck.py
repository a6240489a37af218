"""Central finite-difference checks for taped scalar functions."""

import numpy as np

from . import tensor as T


def numerical_gradient(fn, leaf, step=1e-5):
    """d fn() / d leaf by central differences; ``fn`` returns a 1x1 tensor."""
    grad = np.zeros_like(leaf.value)
    for idx in np.ndindex(leaf.shape):
        old = leaf.value[idx]
        leaf.value[idx] = old + step
        up = fn().item()
        leaf.value[idx] = old - step
        down = fn().item()
        leaf.value[idx] = old
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def analytic_gradients(fn, leaves):
    for leaf in leaves:
        leaf.zero_grad()
    with T.Tape() as tape:
        out = fn()
        tape.backward(out)
    return [leaf.grad.copy() for leaf in leaves]


def relative_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_relative_error(fn, leaves, step=1e-5, floor=1e-6):
    """Largest elementwise relative error between backward and finite differences."""
    worst = 0.0
    for leaf, g in zip(leaves, analytic_gradients(fn, leaves)):
        num = numerical_gradient(fn, leaf, step)
        worst = max(worst, float(relative_error(g, num, floor).max(initial=0.0)))
    return worst
