"""Derivative-free Nelder-Mead simplex minimizer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    converged: bool


def nelder_mead(
    func: Callable[[np.ndarray], float],
    x0,
    step: float = 0.1,
    ftol: float = 1e-8,
    xtol: float = 1e-6,
    max_iter: int = 2000,
    alpha: float = 1.0,
    gamma: float = 2.0,
    rho: float = 0.5,
    sigma: float = 0.5,
) -> SimplexResult:
    """Minimize ``func`` starting from ``x0``.

    Converged when the spread of function values over the simplex is below
    ``ftol`` and every vertex lies within ``xtol`` of the best one.
    Non-finite objective values are treated as +inf.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.size
    nfev = 0

    def f(x):
        nonlocal nfev
        nfev += 1
        v = float(func(x))
        return v if np.isfinite(v) else np.inf

    simplex = np.empty((dim + 1, dim))
    simplex[0] = x0
    for i in range(dim):
        simplex[i + 1] = x0
        simplex[i + 1, i] += step
    fvals = np.array([f(x) for x in simplex])

    nit = 0
    converged = False
    while nit < max_iter:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if (
            np.isfinite(fvals[0])
            and fvals[-1] - fvals[0] <= ftol
            and np.max(np.abs(simplex[1:] - simplex[0])) <= xtol
        ):
            converged = True
            break
        nit += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        # contraction: outside if the reflection improved on the worst point
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        # shrink toward the best vertex
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        fvals[1:] = [f(x) for x in simplex[1:]]

    best = int(np.argmin(fvals))
    return SimplexResult(simplex[best].copy(), float(fvals[best]), nit, nfev, converged)
