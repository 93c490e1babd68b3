"""Finite-difference verification of every differentiable operation.

Each check draws random instances, differentiates them analytically through a
:class:`~ial.grad.Graph` and compares against central differences of the
forward value. The error of one instance is ``|a - n| / max(|a|, |n|)`` over
the whole gradient array (2-norms), which stays meaningful when individual
entries are close to zero.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .grad import Graph
from .ial import uw_eta_grad, uw_objective, uw_sigma_grad
from .net import TaskSpec, forward, init_net

STEP = 1e-5
TOLERANCE = 1e-5


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n)) / denom


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _scalar_check(build, inputs: list[np.ndarray]) -> float:
    """``build(graph, leaves) -> scalar node``; worst error over all inputs."""
    g = Graph()
    leaves = [g.leaf(v, requires_grad=True) for v in inputs]
    g.backward(build(g, leaves))
    worst = 0.0
    for k, v in enumerate(inputs):

        def fn(xk, k=k):
            h = Graph()
            vals = list(inputs)
            vals[k] = xk
            return float(h.value(build(h, [h.leaf(u) for u in vals])))

        worst = max(worst, relative_error(g.grad(leaves[k]), central_difference(fn, v)))
    return worst


def _reduce(g, node, r):
    """Scalar ``sum(r * node)`` built from registered ops only."""
    value = g.value(node)
    if value.ndim == 0:
        return g.scale(node, float(r))
    if value.ndim == 1:
        return g.matmul(node, g.leaf(r))
    # sum_i (e_i @ v) . r_i
    total = None
    for i in range(value.shape[0]):
        row = g.matmul(g.leaf(np.eye(value.shape[0])[i]), node)
        term = g.matmul(row, g.leaf(r[i]))
        total = term if total is None else g.add(total, term)
    return total


def check_matmul(rng) -> float:
    n, k, m = rng.integers(1, 5, size=3)
    a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
    r = rng.standard_normal((n, m))
    return _scalar_check(lambda g, l: _reduce(g, g.matmul(l[0], l[1]), r), [a, b])


def check_add(rng) -> float:
    n, k = rng.integers(1, 5, size=2)
    a, b = rng.standard_normal((n, k)), rng.standard_normal(k)
    r = rng.standard_normal((n, k))
    return _scalar_check(lambda g, l: _reduce(g, g.add(l[0], l[1]), r), [a, b])


def check_relu(rng) -> float:
    a = _away_from_zero(rng, (int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    r = rng.standard_normal(a.shape)
    return _scalar_check(lambda g, l: _reduce(g, g.relu(l[0]), r), [a])


def check_tanh(rng) -> float:
    a = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    r = rng.standard_normal(a.shape)
    return _scalar_check(lambda g, l: _reduce(g, g.tanh(l[0]), r), [a])


def check_scale(rng) -> float:
    a = rng.standard_normal(int(rng.integers(1, 8)))
    c, r = float(rng.standard_normal()), rng.standard_normal(a.shape)
    return _scalar_check(lambda g, l: _reduce(g, g.scale(l[0], c), r), [a])


def check_mse(rng) -> float:
    shape = (int(rng.integers(1, 6)), int(rng.integers(1, 4)))
    a, t = rng.standard_normal(shape), rng.standard_normal(shape)
    return _scalar_check(lambda g, l: g.mse(l[0], t), [a])


def check_softmax_ce(rng) -> float:
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    if rng.random() < 0.5:
        logits, labels = rng.standard_normal(k) * 3, int(rng.integers(0, k))
    else:
        logits, labels = rng.standard_normal((n, k)) * 3, rng.integers(0, k, size=n)
    return _scalar_check(lambda g, l: g.softmax_ce(l[0], labels), [logits])


def check_network(rng) -> float:
    """One task loss of a small multi-task net against every parameter.

    The task alternates at random so both loss kinds and both decoders (one
    carrying zero gradient) are exercised across cases.
    """
    tasks = [TaskSpec("a", "primary", "mse", (3, 2)), TaskSpec("b", "auxiliary", "softmax_ce", (3, 3))]
    net = init_net([3, 4, 3], tasks, int(rng.integers(0, 2**31)))
    for p in net.encoder_params + [q for v in net.decoder_params.values() for q in v]:
        p += 0.3 * rng.standard_normal(p.shape)
    x = rng.standard_normal((4, 3))
    y = {"a": rng.standard_normal((4, 2)), "b": rng.integers(0, 3, size=4)}
    tid = "a" if rng.random() < 0.5 else "b"
    fp = forward(net, x, y)
    fp.graph.backward(fp.loss_nodes[tid])
    groups = [(net.encoder_params, fp.encoder_leaves)] + [
        (net.decoder_params[t], fp.decoder_leaves[t]) for t in ("a", "b")
    ]
    worst = 0.0
    for params, leaves in groups:
        for p, leaf in zip(params, leaves):

            def fn(v, p=p):
                saved = p.copy()
                p[...] = v
                loss = forward(net, x, y).loss(tid)
                p[...] = saved
                return loss

            num = central_difference(fn, p.copy())
            worst = max(worst, relative_error(fp.graph.grad(leaf), num))
    return worst


def check_uncertainty(rng) -> float:
    """Derivative of ``L / (2 sigma^2) + log sigma`` in sigma and in eta = ln sigma^2.

    The derivative vanishes at sigma^2 = L, so errors are scaled by the size of
    the individual terms (1/sigma, resp. 1/2) rather than by the derivative.
    """
    loss = float(np.exp(rng.uniform(math.log(0.05), math.log(20.0))))
    sig = float(np.exp(rng.uniform(math.log(0.2), math.log(5.0))))
    eta = 2.0 * math.log(sig)
    num_sigma = central_difference(lambda s: uw_objective(loss, float(s[0])), np.array([sig]))[0]
    num_eta = central_difference(lambda e: uw_objective(loss, math.exp(float(e[0]) / 2.0)), np.array([eta]))[0]
    scale_s = max(abs(num_sigma), 1.0 / sig)
    scale_e = max(abs(num_eta), 0.5)
    return float(max(
        abs(uw_sigma_grad(loss, sig) - num_sigma) / scale_s,
        abs(uw_eta_grad(loss, eta) - num_eta) / scale_e,
    ))


CHECKS = {
    "matmul": check_matmul,
    "add": check_add,
    "relu": check_relu,
    "tanh": check_tanh,
    "scale": check_scale,
    "mse": check_mse,
    "softmax_ce": check_softmax_ce,
    "network": check_network,
    "uncertainty": check_uncertainty,
}


def run_gradcheck(n_cases: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative error per check over ``n_cases`` random instances each."""
    rng = np.random.default_rng(seed)
    return {name: max(check(rng) for _ in range(n_cases)) for name, check in CHECKS.items()}
