"""Adaptive composite Gauss-Legendre quadrature and golden-section search."""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

import numpy as np

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@lru_cache(maxsize=None)
def _nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def adaptive_gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-9,
    order: int = 15,
    max_depth: int = 40,
) -> float:
    """Integrate a vectorised ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    Each panel is compared against the sum over its two halves; a panel is
    accepted once the two estimates agree within its share of ``tol``.
    """
    if a == b:
        return 0.0
    x, w = _nodes(order)
    total = 0.0
    # (left, right, whole-panel estimate, depth)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    stack = [(a, b, half * float(w @ f(mid + half * x)), 0)]
    width = b - a
    while stack:
        lo, hi, whole, depth = stack.pop()
        c = 0.5 * (lo + hi)
        q = 0.25 * (hi - lo)
        pts = np.concatenate([(lo + c) / 2 + q * x, (c + hi) / 2 + q * x])
        vals = f(pts)
        left = q * float(w @ vals[:order])
        right = q * float(w @ vals[order:])
        if abs(left + right - whole) <= tol * (hi - lo) / width or depth >= max_depth:
            total += left + right
        else:
            stack.append((c, hi, right, depth + 1))
            stack.append((lo, c, left, depth + 1))
    return total


def golden_section_max(
    f: Callable[[float], float], a: float, b: float, tol: float = 1e-9, max_iter: int = 200
) -> tuple[float, float]:
    """Locate a maximum of a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)
