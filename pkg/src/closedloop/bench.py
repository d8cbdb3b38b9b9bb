"""Bell-state benchmark, seeded batches, sweeps and summary statistics."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distort import DistortionConfig
from .measure import MeasurementChannel, TomographyScheme, bell_scheme
from .optim.de import DeConfig, de_run
from .optim.grape import GrapeConfig, grape_run
from .optim.nmplus import NmplusConfig, nmplus_run
from .optim.oracle import ObjectiveOracle
from .optim.trace import RunTrace, StoppingRule
from .qsim import SpinSystem, basis_state, bell_target

ALGORITHMS = ("grape", "nmplus", "de")
CONFIG_TYPES = {"grape": GrapeConfig, "nmplus": NmplusConfig, "de": DeConfig}
CURVE_THRESHOLDS = (0.65, 0.85, 0.99)
CURVE_POINTS = 201

BELL_COUPLING = 214.5
BELL_TIME = 5e-3
BELL_SLICES = 10
BELL_BOUNDS = (-50.0, 50.0)


@dataclass
class Experiment:
    system: SpinSystem
    initial_state: np.ndarray
    target: np.ndarray
    algorithm: str
    config: object
    bounds: tuple = BELL_BOUNDS
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    noise_sigma: float = 0.0
    noise_mode: str = "fidelity"
    stopping: StoppingRule = field(default_factory=StoppingRule)
    runs: int = 50
    master_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not isinstance(self.config, CONFIG_TYPES[self.algorithm]):
            raise TypeError(f"{self.algorithm} needs a {CONFIG_TYPES[self.algorithm].__name__}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def replace(self, **changes) -> "Experiment":
        return dataclasses.replace(self, **changes)


def bell_benchmark(algorithm: str, **overrides) -> Experiment:
    """The two-spin Bell-state benchmark with per-algorithm default settings.

    Recognised overrides: ``slice_count``, ``total_time``, ``coupling``,
    ``bounds``, ``t_r`` (seconds) or ``t_r_over_dt``, ``sub_steps``, ``propagator``,
    ``noise_sigma``, ``noise_mode``, ``threshold_infidelity``, ``max_evals``,
    ``runs``, ``master_seed``, plus any field of the algorithm's config class
    (e.g. ``lambda0``, ``alpha``, ``Pn``, ``max_iterations``).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    ov = dict(overrides)
    system = SpinSystem(
        2,
        ((1, 2, float(ov.pop("coupling", BELL_COUPLING))),),
        float(ov.pop("total_time", BELL_TIME)),
        int(ov.pop("slice_count", BELL_SLICES)),
    )
    lo, hi = (float(b) for b in ov.pop("bounds", BELL_BOUNDS))
    if "t_r" in ov and "t_r_over_dt" in ov:
        raise ValueError("give either t_r or t_r_over_dt, not both")
    t_r = float(ov.pop("t_r")) if "t_r" in ov else float(ov.pop("t_r_over_dt", 0.0)) * system.dt
    distortion = DistortionConfig(t_r, int(ov.pop("sub_steps", 32)), ov.pop("propagator", "magnus"))
    stopping = StoppingRule(ov.pop("threshold_infidelity", 1e-3), ov.pop("max_evals", 100_000))
    top = {k: ov.pop(k) for k in ("noise_sigma", "noise_mode", "runs", "master_seed") if k in ov}
    cls = CONFIG_TYPES[algorithm]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(ov) - names
    if unknown:
        raise ValueError(f"unknown override(s): {', '.join(sorted(unknown))}")
    if algorithm != "grape":
        ov.setdefault("lo", lo)
        ov.setdefault("hi", hi)
    config = cls(**ov)
    return Experiment(system, basis_state([0, 0]), bell_target(), algorithm, config,
                      bounds=(lo, hi), distortion=distortion, stopping=stopping, **top)


# --------------------------------------------------------------------------
# running

def run_streams(master_seed: int, run_index: int, point: int = 0):
    """Independent (noise, algorithm) generators for one run of one sweep point."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(point), int(run_index)))
    noise_ss, algo_ss = ss.spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(algo_ss)


def make_oracle(experiment: Experiment, noise_rng) -> ObjectiveOracle:
    if np.allclose(experiment.target, bell_target()):
        scheme = bell_scheme()
    else:
        scheme = TomographyScheme.from_target(experiment.target)
    channel = MeasurementChannel(scheme, experiment.noise_sigma, noise_rng, experiment.noise_mode)
    return ObjectiveOracle(experiment.system, experiment.initial_state, experiment.target,
                           channel, experiment.distortion)


def run_single(experiment: Experiment, run_index: int, point: int = 0) -> RunTrace:
    """One seeded optimisation run. Optimizer exceptions become failed traces."""
    noise_rng, algo_rng = run_streams(experiment.master_seed, run_index, point)
    oracle = make_oracle(experiment, noise_rng)
    cfg = experiment.config
    try:
        if experiment.algorithm == "grape":
            lo, hi = experiment.bounds
            u0 = algo_rng.uniform(lo, hi, experiment.system.n_params)
            trace = grape_run(oracle, cfg, u0, experiment.stopping)
        elif experiment.algorithm == "nmplus":
            trace = nmplus_run(oracle, cfg, experiment.stopping, algo_rng)
        else:
            trace = de_run(oracle, cfg, experiment.stopping, algo_rng)
    except Exception as exc:  # a failed run is data, not a batch abort
        trace = RunTrace(stop_reason="error", error=f"{type(exc).__name__}: {exc}",
                         total_evals=oracle.evals, final_exact=float("nan"))
    trace.run_index = run_index
    return trace


def _run_job(args):
    experiment, run_index, point = args
    return run_single(experiment, run_index, point)


def run_traces(experiment: Experiment, point: int = 0, workers: int = 1) -> list:
    jobs = [(experiment, i, point) for i in range(1, experiment.runs + 1)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


# --------------------------------------------------------------------------
# statistics

def evals_to_threshold(trace: RunTrace, fidelity_threshold: float):
    """First cumulative evaluation count at which the recorded fidelity reaches
    ``fidelity_threshold``; None if it never does."""
    if not 0 < fidelity_threshold < 1:
        raise ValueError("fidelity_threshold must lie in (0, 1)")
    for s in trace.samples:
        if s.measured_fidelity >= fidelity_threshold:
            return int(s.cum_evals)
    return None


def _mean_var(values):
    values = sorted(float(v) for v in values)
    if not values:
        return None, None
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in sorted(values, key=lambda v: (v - mean) ** 2)) / len(values)
    return mean, var


@dataclass
class BatchSummary:
    runs: int
    success_rate: float
    success_rate_exact: float
    mean_evals: float | None
    var_evals: float | None
    mean_final_exact: float
    crossings: dict
    curve_evals: np.ndarray
    curve_infidelity: np.ndarray
    traces: list = field(default_factory=list, repr=False)

    def eval_mean(self, threshold: float):
        return self.crossings[threshold]["mean"]


def average_curve(traces, n_points: int = CURVE_POINTS):
    """Mean exact infidelity on a shared evaluation grid.

    Each run is a step function (last recorded value carried forward, the
    first value carried backward); the grid spans the longest run.
    """
    usable = [t for t in traces if t.samples]
    if not usable:
        return np.array([], dtype=np.int64), np.array([])
    end = max(t.samples[-1].cum_evals for t in usable)
    grid = np.unique(np.linspace(0, end, n_points).round().astype(np.int64))
    rows = []
    for t in usable:
        ev, _, ex = t.arrays()
        idx = np.clip(np.searchsorted(ev, grid, side="right") - 1, 0, None)
        rows.append(1.0 - ex[idx])
    rows = np.sort(np.array(rows), axis=0)
    return grid, rows.mean(axis=0)


def summarize(traces, threshold_infidelity: float) -> BatchSummary:
    """Aggregate finished runs. Invariant under permutation of ``traces``."""
    traces = sorted(traces, key=lambda t: t.run_index)
    n = len(traces)
    succ = [t for t in traces if t.succeeded]
    mean, var = _mean_var(t.total_evals for t in succ)
    crossings = {}
    for thr in CURVE_THRESHOLDS:
        hits = [e for e in (evals_to_threshold(t, thr) for t in traces) if e is not None]
        m, v = _mean_var(hits)
        crossings[thr] = {"mean": m, "var": v, "count": len(hits)}
    finals = [t.final_exact for t in traces if np.isfinite(t.final_exact)]
    exact_ok = sum(1 for f in finals if 1.0 - f <= threshold_infidelity)
    grid, curve = average_curve(traces)
    return BatchSummary(
        runs=n,
        success_rate=len(succ) / n if n else 0.0,
        success_rate_exact=exact_ok / n if n else 0.0,
        mean_evals=mean,
        var_evals=var,
        mean_final_exact=math.fsum(sorted(finals)) / len(finals) if finals else float("nan"),
        crossings=crossings,
        curve_evals=grid,
        curve_infidelity=curve,
        traces=traces,
    )


def run_batch(experiment: Experiment, workers: int = 1, point: int = 0) -> BatchSummary:
    traces = run_traces(experiment, point, workers)
    return summarize(traces, experiment.stopping.threshold_infidelity or 0.0)


def efficiency_factor(summary: BatchSummary, reference: BatchSummary, threshold: float = 0.99):
    """Ratio of mean evaluations-to-``threshold``; None if either is missing."""
    a, b = summary.eval_mean(threshold), reference.eval_mean(threshold)
    if a is None or b is None or b == 0:
        return None
    return a / b


SWEEP_PARAMETERS = ("t_r_over_dt", "noise_sigma")


def with_parameter(experiment: Experiment, parameter: str, value: float) -> Experiment:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError("sweep values must be finite and nonnegative")
    if parameter == "t_r_over_dt":
        dist = dataclasses.replace(experiment.distortion, t_r=value * experiment.system.dt)
        return experiment.replace(distortion=dist)
    if parameter == "noise_sigma":
        return experiment.replace(noise_sigma=value)
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def sweep(experiment: Experiment, parameter: str, values, workers: int = 1) -> list:
    """One batch per value; point p uses seed streams (master_seed, p, run)."""
    values = [float(v) for v in values]
    points = [with_parameter(experiment, parameter, v) for v in values]
    return [(v, run_batch(e, workers, point=p)) for p, (v, e) in enumerate(zip(values, points))]
