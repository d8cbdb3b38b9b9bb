"""NMplus: Nelder-Mead with a regular initial simplex and a quasi-gradient
reflection direction fitted through all vertices.

The objective minimised is the measured infidelity 1 - f(u).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import MAX_ITERATIONS, NON_FINITE, Recorder, RunTrace, StoppingRule

COND_LIMIT = 1e12


@dataclass(frozen=True)
class NmplusConfig:
    """Reflection ``alpha``, contraction ``beta``, expansion ``gamma_exp``, shrink ``delta``.

    ``step_norm`` selects how far the reflection moves along the fitted
    slope: ``"simplex"`` rescales the slope to unit length times the mean
    distance of the vertices from the best one; ``"none"`` uses the raw slope
    (u_r = u_1 - alpha * a), whose length then depends on the units of f and u.
    """

    alpha: float = 3.0
    beta: float = 1.0 / 3.0
    gamma_exp: float = 2.0
    delta: float = 1.0 / 3.0
    lo: float = -50.0
    hi: float = 50.0
    max_iterations: int | None = 300
    step_norm: str = "simplex"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.gamma_exp > 1:
            raise ValueError("gamma_exp must be > 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")
        if self.step_norm not in ("simplex", "none"):
            raise ValueError(f"unknown step_norm {self.step_norm!r}")


def nm_regular_simplex(p: int, base, scales, bounds=None) -> np.ndarray:
    """Regular-form simplex around ``base``.

    Vertex i (i = 2..p+1) is base + scales[i-2] * (sqrt(p+1) - 1) / sqrt(p),
    except on coordinate j = i-1 where the factor is (sqrt(p+1) + p - 1) / sqrt(p).
    ``scales`` has shape (p, p); row r belongs to vertex r+2.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    base = np.broadcast_to(np.asarray(base, dtype=np.float64), (p,))
    scales = np.asarray(scales, dtype=np.float64)
    if scales.shape != (p, p):
        raise ValueError(f"scales must have shape {(p, p)}")
    off = (np.sqrt(p + 1) - 1) / np.sqrt(p)
    on = (np.sqrt(p + 1) + p - 1) / np.sqrt(p)
    factor = np.full((p, p), off)
    np.fill_diagonal(factor, on)
    verts = np.vstack([base, base + scales * factor])
    if bounds is not None:
        verts = np.clip(verts, bounds[0], bounds[1])
    return verts


def draw_simplex_scales(p: int, bounds, rng) -> np.ndarray:
    """Random amplitudes C_ij, uniform over the control range."""
    return rng.uniform(bounds[0], bounds[1], size=(p, p))


def nm_hyperplane_direction(vertices, infidelities, cond_limit: float = COND_LIMIT):
    """Slope (a_1..a_p) of the hyperplane through all p+1 (vertex, f) pairs.

    Returns None when the vertex matrix is singular or its condition number
    exceeds ``cond_limit``.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    y = np.asarray(infidelities, dtype=np.float64)
    n = vertices.shape[0]
    if vertices.shape != (n, n - 1) or y.shape != (n,):
        raise ValueError("need p+1 vertices of length p and p+1 values")
    x = np.hstack([np.ones((n, 1)), vertices])
    cond = np.linalg.cond(x)
    if not np.isfinite(cond) or cond > cond_limit:
        return None
    return np.linalg.solve(x, y)[1:]


def _degenerate(verts, tol=1e-12) -> bool:
    diff = np.abs(verts[:, None, :] - verts[None, :, :]).max(axis=-1)
    np.fill_diagonal(diff, np.inf)
    return bool(diff.min() <= tol)


class _Stopped(Exception):
    pass


def nmplus_run(oracle, config: NmplusConfig, stop: StoppingRule, rng=None,
               initial_simplex=None) -> RunTrace:
    """Run NMplus. Each iteration logs ``(iteration, branch, w, fallback)`` in
    ``trace.branches``, where ``w`` is the number of fidelity measurements made.
    """
    rng = np.random.default_rng(rng)
    p = oracle.system.n_params
    bounds = (config.lo, config.hi)
    if initial_simplex is None:
        verts = nm_regular_simplex(p, np.zeros(p), draw_simplex_scales(p, bounds, rng), bounds)
    else:
        verts = np.clip(np.array(initial_simplex, dtype=np.float64), *bounds)
    if verts.shape != (p + 1, p):
        raise ValueError(f"initial simplex must have shape {(p + 1, p)}")
    if _degenerate(verts):
        raise ValueError("degenerate initial simplex")

    rec = Recorder(oracle, stop, elitist=True)
    k = 0
    w = 0

    def infid(u):
        nonlocal w
        value = oracle.evaluate(u).value
        w += 1
        if rec.observe(u, value, k):
            raise _Stopped
        return 1.0 - value

    f = np.empty(p + 1)
    try:
        for i in range(p + 1):
            f[i] = infid(verts[i])
        while True:
            if config.max_iterations is not None and k >= config.max_iterations:
                rec.reason = MAX_ITERATIONS
                break
            if rec.budget(k):
                break
            order = np.argsort(f, kind="stable")
            verts, f = verts[order], f[order]
            k += 1
            w = 0
            slope = nm_hyperplane_direction(verts, f)
            fallback = slope is None
            if fallback:
                centroid = verts[:-1].mean(axis=0)
                u_r = centroid + (centroid - verts[-1])
            else:
                if config.step_norm == "simplex":
                    norm = np.linalg.norm(slope)
                    radius = np.linalg.norm(verts[1:] - verts[0], axis=1).mean()
                    slope = slope * (radius / norm) if norm > 0 else slope
                u_r = verts[0] - config.alpha * slope
            u_r = np.clip(u_r, *bounds)
            f_r = infid(u_r)
            if f[0] <= f_r < f[-2]:
                branch = "reflect"
                verts[-1], f[-1] = u_r, f_r
            elif f_r < f[0]:
                u_e = np.clip(verts[0] + config.gamma_exp * (u_r - verts[0]), *bounds)
                f_e = infid(u_e)
                if f_e < f_r:
                    branch = "expand"
                    verts[-1], f[-1] = u_e, f_e
                else:
                    branch = "expand_reject"
                    verts[-1], f[-1] = u_r, f_r
            else:
                outside = f_r < f[-1]
                sgn = 1.0 if outside else -1.0
                u_c = np.clip(verts[0] + sgn * config.beta * (u_r - verts[0]), *bounds)
                f_c = infid(u_c)
                tag = "outside" if outside else "inside"
                if f_c <= f_r:
                    branch = f"contract_{tag}"
                    verts[-1], f[-1] = u_c, f_c
                else:
                    branch = f"shrink_{tag}"
                    verts[1:] = verts[0] + config.delta * (verts[1:] - verts[0])
                    for i in range(1, p + 1):
                        f[i] = infid(verts[i])
            if not np.all(np.isfinite(f)):
                rec.reason = NON_FINITE
                break
            rec.trace.branches.append((k, branch, w, fallback))
    except _Stopped:
        if k > 0 and (not rec.trace.branches or rec.trace.branches[-1][0] != k):
            rec.trace.branches.append((k, "interrupted", w, False))
    best = rec.best_pulse if rec.best_pulse is not None else verts[0]
    return rec.finish(best, k)
