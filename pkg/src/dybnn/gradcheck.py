"""Finite-difference checks of the analytic gradients.

Sign outputs are piecewise constant, so plain central differences see zero
almost everywhere while the straight-through rule does not. Two checks
avoid that mismatch:

``frozen``
    Signs from the base forward are replayed in every perturbed forward and
    the analytic pass treats sign as having zero derivative. This compares
    the gradient of every smooth path (weight scales, norms, residual stream,
    softmax, pooling, classifier) exactly.
``surrogate``
    Sign is replaced by hard-tanh in both passes, which makes the
    straight-through gradient the true derivative and so covers thresholds
    and hyperfunction weights.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ArgumentError


@dataclass
class GradCheckResult:
    name: str
    rel_error: float  # ||analytic - numeric|| / max(||analytic||, ||numeric||)
    max_abs_error: float
    analytic_norm: float
    numeric_norm: float
    coords: int


def relative_error(a, n, floor=1e-12):
    a, n = np.asarray(a, np.float64), np.asarray(n, np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def select_parameters(model, pattern=None):
    named = list(model.named_parameters())
    if pattern is not None:
        rx = re.compile(pattern)
        named = [(n, p) for n, p in named if rx.search(n)]
    if not named:
        raise ArgumentError(f"parameter selector {pattern!r} matched nothing")
    return named


def finite_diff_check(model, x, y, pattern=None, eps=1e-6, mode="frozen", max_coords=None, seed=0):
    """Compare analytic and central-difference gradients of the mean cross-entropy.

    Runs in float64. ``max_coords`` caps the coordinates probed per tensor
    (chosen at random with ``seed``); ``None`` probes all of them.
    """
    if mode not in ("frozen", "surrogate"):
        raise ArgumentError(f"mode must be 'frozen' or 'surrogate', got {mode!r}")
    named = select_parameters(model, pattern)
    model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)

    with ag.default_dtype(np.float64):
        if mode == "frozen":
            with ag.sign_policy("detached"), ag.record_signs() as tape:
                loss = ag.cross_entropy(model(Tensor(x)), y)
                model.zero_grad()
                loss.backward()

            def f():
                with ag.no_grad(), ag.replay_signs(tape):
                    return float(ag.cross_entropy(model(Tensor(x)), y).data)
        else:
            with ag.sign_policy("surrogate"):
                loss = ag.cross_entropy(model(Tensor(x)), y)
                model.zero_grad()
                loss.backward()

            def f():
                with ag.no_grad(), ag.sign_policy("surrogate"):
                    return float(ag.cross_entropy(model(Tensor(x)), y).data)

        results = []
        for name, p in named:
            analytic = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, max_coords, replace=False)
            num = np.empty(idx.size)
            for k, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + eps
                up = f()
                flat[i] = old - eps
                down = f()
                flat[i] = old
                num[k] = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            results.append(GradCheckResult(
                name, relative_error(a, num), float(np.abs(a - num).max(initial=0.0)),
                float(np.linalg.norm(a)), float(np.linalg.norm(num)), int(idx.size),
            ))
    return results
