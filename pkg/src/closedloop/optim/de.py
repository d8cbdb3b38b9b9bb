"""Differential evolution, best-base donor with two difference vectors and
binomial crossover. Fitness is the measured fidelity (maximised)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import MAX_ITERATIONS, Recorder, RunTrace, StoppingRule


@dataclass(frozen=True)
class DeConfig:
    R: float = 0.6
    Cr: float = 0.95
    Pn: int = 10
    lo: float = -50.0
    hi: float = 50.0
    max_iterations: int | None = 75
    bound_repair: str = "midpoint"

    def __post_init__(self):
        if self.Pn < 6:
            raise ValueError("Pn must be >= 6")
        if not 0 <= self.Cr <= 1:
            raise ValueError("Cr must lie in [0, 1]")
        if not self.lo < self.hi:
            raise ValueError("lo must be < hi")
        if self.bound_repair not in ("midpoint", "clip"):
            raise ValueError(f"unknown bound_repair {self.bound_repair!r}")


def de_mutate(population, best: int, i: int, R: float, rng, bounds=None,
              repair: str = "midpoint") -> np.ndarray:
    """u_best + R (u_r1 - u_r2 + u_r3 - u_r4), r1..r4 distinct and != i.

    Components outside ``bounds`` are repaired: ``"midpoint"`` moves them
    halfway from the parent u_i to the violated bound, ``"clip"`` saturates.
    Clipping piles small populations onto the bounds and stalls the search.
    """
    population = np.asarray(population, dtype=np.float64)
    n = population.shape[0]
    if n < 6:
        raise ValueError("population must hold at least 6 individuals")
    others = np.delete(np.arange(n), i)
    r1, r2, r3, r4 = rng.choice(others, size=4, replace=False)
    donor = population[best] + R * (population[r1] - population[r2] + population[r3] - population[r4])
    if bounds is not None:
        lo, hi = bounds
        if repair == "clip":
            donor = np.clip(donor, lo, hi)
        else:
            parent = population[i]
            donor = np.where(donor < lo, 0.5 * (parent + lo), donor)
            donor = np.where(donor > hi, 0.5 * (parent + hi), donor)
    return donor


def de_crossover(target, donor, Cr: float, rng) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if target.shape != donor.shape:
        raise ValueError("target and donor lengths differ")
    p = target.size
    j_rand = rng.integers(p)
    take = rng.random(p) <= Cr
    take[j_rand] = True
    return np.where(take, donor, target)


class _Stopped(Exception):
    pass


def de_run(oracle, config: DeConfig, stop: StoppingRule, rng=None) -> RunTrace:
    rng = np.random.default_rng(rng)
    p = oracle.system.n_params
    bounds = (config.lo, config.hi)
    rec = Recorder(oracle, stop, elitist=True)
    k = 0

    def fitness(u):
        value = oracle.evaluate(u).value
        if rec.observe(u, value, k):
            raise _Stopped
        return value

    pop = rng.uniform(config.lo, config.hi, size=(config.Pn, p))
    fit = np.empty(config.Pn)
    try:
        for i in range(config.Pn):
            fit[i] = fitness(pop[i])
        while True:
            if config.max_iterations is not None and k >= config.max_iterations:
                rec.reason = MAX_ITERATIONS
                break
            if rec.budget(k):
                break
            k += 1
            for i in range(config.Pn):
                donor = de_mutate(pop, int(np.argmax(fit)), i, config.R, rng, bounds,
                                  config.bound_repair)
                trial = de_crossover(pop[i], donor, config.Cr, rng)
                fit[i] = fitness(pop[i])
                f_trial = fitness(trial)
                if f_trial >= fit[i]:
                    pop[i], fit[i] = trial, f_trial
    except _Stopped:
        pass
    best = rec.best_pulse if rec.best_pulse is not None else pop[int(np.argmax(fit))]
    return rec.finish(best, k)
