"""Shared test utilities: finite-difference gradient checking and tiny fixtures."""

from __future__ import annotations

import numpy as np

from absorb_diffuse import autodiff as ad


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1.0) -> float:
    """Max elementwise |got-want| / max(|want|, floor).

    The unit floor keeps near-zero reference entries from blowing up the
    ratio; for gradients of order 1 this behaves like a relative error.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), floor)
    return float(np.max(np.abs(got - want) / denom))


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar-valued f at x, elementwise."""
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_gradient(build, params: dict[str, np.ndarray], tol: float,
                   eps: float = 1e-3) -> None:
    """Compare autodiff gradients of `build` against finite differences.

    build(nodes: dict[str, Node]) -> scalar Node. Each parameter is
    perturbed independently; failure names the offending parameter.
    """
    nodes = {k: ad.parameter(v.copy()) for k, v in params.items()}
    loss = build(nodes)
    ad.zero_grads(nodes)
    loss.backward()
    analytic = {k: n.grad.copy() for k, n in nodes.items()}

    for key in params:
        def scalar(x, key=key):
            trial = {k: ad.constant(params[k] if k != key else x)
                     for k in params}
            return float(build(trial).value)

        fd = numeric_gradient(scalar, params[key].copy(), eps=eps)
        err = rel_err(analytic[key], fd)
        assert err < tol, f"gradient mismatch for {key!r}: rel err {err:.3e} >= {tol}"


def random_logits(rng: np.random.Generator, shape, scale: float = 2.0,
                  dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(dtype)
