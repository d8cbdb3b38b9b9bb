"""Closed-loop GRAPE with gradients measured by inserted pi/2 rotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import MAX_ITERATIONS, NON_FINITE, Recorder, RunTrace, StoppingRule


@dataclass(frozen=True)
class GrapeConfig:
    """Step-size schedule lambda_l = lambda0 * decay**min(l, max_decays).

    With ``schedule="adaptive"`` the index l counts iterations whose measured
    fidelity did not improve on the previous one; with ``"geometric"`` it is
    the iteration index itself, so the step halves unconditionally.
    """

    lambda0: float = 2e4
    decay: float = 0.5
    max_decays: int = 40
    max_iterations: int | None = 15
    schedule: str = "adaptive"

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.schedule not in ("adaptive", "geometric"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def step(self, l: int) -> float:
        return self.lambda0 * self.decay ** min(l, self.max_decays)


def grape_measure_gradient(oracle, pulse) -> np.ndarray:
    """g = dt * (f(+pi/2 inserted) - f(-pi/2 inserted)) per control component.

    Costs 2p fidelity measurements. The estimate is first order in the slice
    length: the exact derivative of the propagator integrates the control
    operator over the whole slice, whereas the rotation probes only its end.
    """
    f_plus, f_minus = oracle.measure_insertions(pulse)
    return oracle.system.dt * (f_plus - f_minus)


def grape_run(oracle, config: GrapeConfig, initial_pulse, stop: StoppingRule) -> RunTrace:
    rec = Recorder(oracle, stop, elitist=False)
    u = np.array(initial_pulse, dtype=np.float64)
    f = oracle.evaluate(u).value
    rec.observe(u, f, 0)
    k = 0
    fails = 0
    while rec.reason is None:
        if config.max_iterations is not None and k >= config.max_iterations:
            rec.reason = MAX_ITERATIONS
            break
        if rec.budget(k):
            break
        g = grape_measure_gradient(oracle, u)
        if not np.all(np.isfinite(g)):
            rec.reason = NON_FINITE
            rec.trace.error = "non-finite gradient"
            break
        l = k if config.schedule == "geometric" else fails
        u = u + config.step(l) * g
        k += 1
        f_new = oracle.evaluate(u).value
        rec.observe(u, f_new, k)
        if f_new < f:
            fails += 1
        f = f_new
    return rec.finish(u, k, f)
