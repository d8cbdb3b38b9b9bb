"""Stopping rules and per-run convergence records."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

THRESHOLD_REACHED = "threshold_reached"
EVAL_BUDGET_EXHAUSTED = "eval_budget_exhausted"
MAX_ITERATIONS = "max_iterations"
NON_FINITE = "non_finite"


@dataclass(frozen=True)
class StoppingRule:
    """First trigger wins: threshold, then evaluation budget, then iteration cap.

    ``None`` disables a criterion.
    """

    threshold_infidelity: float | None = 1e-3
    max_evals: int | None = 100_000
    max_iterations: int | None = None

    def __post_init__(self):
        if self.threshold_infidelity is not None and not 0 < self.threshold_infidelity < 1:
            raise ValueError("threshold_infidelity must lie in (0, 1)")
        if self.max_evals is not None and self.max_evals < 1:
            raise ValueError("max_evals must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    def check(self, measured_fidelity: float | None, evals: int, iteration: int | None = None):
        if (measured_fidelity is not None and self.threshold_infidelity is not None
                and 1.0 - measured_fidelity <= self.threshold_infidelity):
            return THRESHOLD_REACHED
        if self.max_evals is not None and evals > self.max_evals:
            return EVAL_BUDGET_EXHAUSTED
        if iteration is not None and self.max_iterations is not None and iteration >= self.max_iterations:
            return MAX_ITERATIONS
        return None


def stopping_rule(threshold_infidelity: float = 1e-3, max_evals: int = 100_000,
                  max_iterations: int | None = None) -> StoppingRule:
    return StoppingRule(threshold_infidelity, max_evals, max_iterations)


@dataclass
class Sample:
    iteration: int
    cum_evals: int
    measured_fidelity: float
    exact_fidelity: float


@dataclass
class RunTrace:
    samples: list = field(default_factory=list)
    terminal_pulse: np.ndarray | None = None
    stop_reason: str | None = None
    iterations: int = 0
    total_evals: int = 0
    final_measured: float = float("nan")
    final_exact: float = float("nan")
    branches: list = field(default_factory=list)
    error: str | None = None
    run_index: int = 0

    @property
    def succeeded(self) -> bool:
        return self.stop_reason == THRESHOLD_REACHED

    def arrays(self):
        """(cum_evals, measured, exact) as numpy arrays."""
        if not self.samples:
            empty = np.array([])
            return empty.astype(int), empty, empty
        ev = np.array([s.cum_evals for s in self.samples], dtype=np.int64)
        meas = np.array([s.measured_fidelity for s in self.samples])
        ex = np.array([s.exact_fidelity for s in self.samples])
        return ev, meas, ex


class Recorder:
    """Bookkeeping shared by the optimizers.

    ``elitist=True`` records the best measured value seen so far (NMplus, DE);
    otherwise the current value is recorded as is (GRAPE).
    """

    def __init__(self, oracle, stop: StoppingRule, elitist: bool):
        self.oracle = oracle
        self.stop = stop
        self.elitist = elitist
        self.trace = RunTrace()
        self.best_value = -np.inf
        self.best_pulse = None
        self._best_exact = float("nan")
        self.reason = None

    def observe(self, pulse, value: float, iteration: int):
        """Record one candidate measurement; returns a stop reason or None."""
        if not np.isfinite(value):
            self.reason = NON_FINITE
            self.trace.error = "non-finite measured fidelity"
            return self.reason
        if not self.elitist or value > self.best_value:
            self.best_value = float(value)
            self.best_pulse = np.array(pulse, dtype=np.float64)
            self._best_exact = self.oracle.exact(pulse)
        self.trace.samples.append(Sample(iteration, self.oracle.evals, self.best_value, self._best_exact))
        self.reason = self.stop.check(value, self.oracle.evals)
        return self.reason

    def budget(self, iteration: int | None = None):
        """Check evaluation budget and iteration cap without a new measurement."""
        self.reason = self.stop.check(None, self.oracle.evals, iteration)
        return self.reason

    def finish(self, pulse, iterations: int, value: float | None = None):
        tr = self.trace
        tr.terminal_pulse = np.array(pulse, dtype=np.float64)
        tr.stop_reason = self.reason if self.reason is not None else MAX_ITERATIONS
        tr.iterations = iterations
        tr.total_evals = self.oracle.evals
        tr.final_measured = float(self.best_value if value is None else value)
        tr.final_exact = self.oracle.exact(pulse)
        return tr
