"""Shared test helpers: finite-difference gradient checking."""

import numpy as np

from iars_ssl.numerics import GradTape, backward


def finite_difference_grads(build, tensors, h=1e-5):
    """Centered differences of the scalar build() w.r.t. each tensor entry."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build().item()
            flat[i] = orig - h
            down = build().item()
            flat[i] = orig
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build, tensors, h=1e-5, tol=1e-4, floor=1e-6):
    """Tape gradients vs centered differences (64-bit).

    The error is relative with an absolute floor in the denominator, so
    exactly-zero gradients (dead ReLU paths) compare cleanly.
    """
    for t in tensors:
        t.zero_grad()
    tape = GradTape()
    with tape:
        loss = build()
    backward(loss, tape)
    fd = finite_difference_grads(build, tensors, h=h)
    worst = 0.0
    for t, f in zip(tensors, fd):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        rel = np.abs(analytic - f) / np.maximum(np.maximum(np.abs(analytic), np.abs(f)), floor)
        worst = max(worst, float(rel.max()))
    assert worst <= tol, f"max relative gradient error {worst:.3e} > {tol}"
    return worst
