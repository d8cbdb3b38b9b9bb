import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from closedloop.bench import (
    Experiment, average_curve, bell_benchmark, efficiency_factor, evals_to_threshold, run_batch,
    run_single, run_streams, summarize, sweep, with_parameter,
)
from closedloop.optim.trace import EVAL_BUDGET_EXHAUSTED, THRESHOLD_REACHED, RunTrace, Sample


def quick(algorithm="nmplus", **kw):
    base = dict(nmplus=dict(max_iterations=25), de=dict(max_iterations=2),
                grape=dict(max_iterations=2))[algorithm]
    base.update(kw)
    return bell_benchmark(algorithm, **base)


def fake_trace(points, run_index=0, reason=THRESHOLD_REACHED):
    samples = [Sample(i, e, f, f) for i, (e, f) in enumerate(points)]
    return RunTrace(samples=samples, stop_reason=reason, total_evals=points[-1][0],
                    final_exact=points[-1][1], run_index=run_index)


# ---------------------------------------------------------------- experiment

def test_grape_defaults():
    e = bell_benchmark("grape")
    assert e.system.dt == pytest.approx(5e-4)
    assert e.system.n_params == 40
    assert e.config.lambda0 == 2e4 and e.config.max_iterations == 15


def test_de_defaults():
    c = bell_benchmark("de").config
    assert (c.Pn, c.R, c.Cr, c.max_iterations) == (10, 0.6, 0.95, 75)


def test_nmplus_defaults():
    e = bell_benchmark("nmplus")
    assert e.config.max_iterations == 300
    assert e.bounds == (-50.0, 50.0)
    assert e.stopping.threshold_infidelity == 1e-3 and e.stopping.max_evals == 100_000


def test_slice_override():
    e = bell_benchmark("grape", slice_count=20)
    assert e.system.n_params == 80
    assert e.system.dt == pytest.approx(2.5e-4)


def test_distortion_override():
    e = bell_benchmark("de", t_r_over_dt=0.5, sub_steps=16)
    assert e.distortion.t_r == pytest.approx(2.5e-4) and e.distortion.sub_steps == 16


@pytest.mark.parametrize("kw", [dict(colour="red"), dict(t_r=1e-4, t_r_over_dt=0.2), dict(lambda0=-1),
                                dict(runs=0)])
def test_invalid_overrides(kw):
    with pytest.raises(ValueError):
        bell_benchmark("grape", **kw)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        bell_benchmark("pso")


def test_experiment_config_type_checked():
    e = bell_benchmark("grape")
    with pytest.raises(TypeError):
        e.replace(algorithm="de")


# ---------------------------------------------------------------- runs

def test_streams_independent():
    seen = set()
    for point in range(3):
        for run in range(1, 6):
            noise, algo = run_streams(7, run, point)
            seen.add(noise.integers(2**62))
            seen.add(algo.integers(2**62))
    assert len(seen) == 30


def test_run_single_deterministic():
    e = quick("nmplus", noise_sigma=1e-3)
    a, b = run_single(e, 3), run_single(e, 3)
    assert a.samples == b.samples
    np.testing.assert_array_equal(a.terminal_pulse, b.terminal_pulse)
    assert a.branches == b.branches
    assert run_single(e, 4).samples != a.samples


def test_budget_ten_stops_early():
    tr = run_single(quick("nmplus", max_evals=10), 1)
    assert tr.stop_reason == EVAL_BUDGET_EXHAUSTED
    assert tr.total_evals == 12
    tr = run_single(quick("grape", max_evals=10), 1)
    assert tr.stop_reason == EVAL_BUDGET_EXHAUSTED
    assert tr.total_evals == 246


def test_optimizer_error_becomes_failed_trace():
    e = quick("nmplus", lo=0.0, hi=1e-14)
    tr = run_single(e, 1)
    assert tr.stop_reason == "error" and "degenerate" in tr.error
    s = summarize([tr], 1e-3)
    assert s.success_rate == 0


def test_runs_never_leave_bounds():
    e = quick("de")
    tr = run_single(e, 1)
    assert np.all(np.abs(tr.terminal_pulse) <= 50)


# ---------------------------------------------------------------- statistics

def test_evals_to_threshold():
    t = fake_trace([(3, 0.2), (6, 0.7)])
    assert evals_to_threshold(t, 0.65) == 6
    assert evals_to_threshold(t, 0.99) is None
    with pytest.raises(ValueError):
        evals_to_threshold(t, 1.0)


def test_summary_single_run():
    s = summarize([fake_trace([(3, 0.2), (30, 0.9995)])], 1e-3)
    assert s.success_rate == 1 and s.var_evals == 0 and s.mean_evals == 30


def test_summary_excludes_failures():
    ok = fake_trace([(3, 0.2), (30, 0.9995)], 1)
    ok2 = fake_trace([(3, 0.2), (50, 0.9995)], 2)
    bad = fake_trace([(3, 0.2), (100_003, 0.5)], 3, EVAL_BUDGET_EXHAUSTED)
    s = summarize([ok, bad, ok2], 1e-3)
    assert s.success_rate == pytest.approx(2 / 3)
    assert s.mean_evals == 40 and s.var_evals == 100
    assert s.crossings[0.65]["count"] == 2 and s.crossings[0.99]["mean"] == 40


def test_efficiency_factor():
    a = summarize([fake_trace([(3, 0.2), (600, 0.995)])], 1e-3)
    b = summarize([fake_trace([(3, 0.2), (100, 0.995)])], 1e-3)
    assert efficiency_factor(a, b) == pytest.approx(6)
    c = summarize([fake_trace([(3, 0.2)])], 1e-3)
    assert efficiency_factor(a, c) is None


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_curve_bounded_and_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    traces = []
    for i in range(n):
        k = rng.integers(1, 15)
        ev = np.cumsum(rng.integers(1, 50, k)) * 3
        f = np.maximum.accumulate(rng.uniform(0, 1, k))
        traces.append(fake_trace(list(zip(ev.tolist(), f.tolist())), i))
    grid, curve = average_curve(traces)
    per_run = []
    for t in traces:
        ev, _, ex = t.arrays()
        idx = np.clip(np.searchsorted(ev, grid, side="right") - 1, 0, None)
        per_run.append(1 - ex[idx])
    per_run = np.array(per_run)
    assert np.all(curve >= per_run.min(0) - 1e-15) and np.all(curve <= per_run.max(0) + 1e-15)
    perm = [traces[i] for i in rng.permutation(n)]
    a, b = summarize(traces, 1e-3), summarize(perm, 1e-3)
    np.testing.assert_array_equal(a.curve_infidelity, b.curve_infidelity)
    assert (a.mean_evals, a.var_evals, a.crossings) == (b.mean_evals, b.var_evals, b.crossings)


def test_success_matches_stop_reason():
    e = quick("nmplus", runs=3, threshold_infidelity=0.5)
    s = run_batch(e)
    assert s.success_rate == np.mean([t.stop_reason == THRESHOLD_REACHED for t in s.traces])


# ---------------------------------------------------------------- sweeps

def test_with_parameter():
    e = quick("de")
    assert with_parameter(e, "t_r_over_dt", 0.5).distortion.t_r == pytest.approx(2.5e-4)
    assert with_parameter(e, "noise_sigma", 1e-4).noise_sigma == 1e-4
    with pytest.raises(ValueError):
        with_parameter(e, "noise_sigma", -1)
    with pytest.raises(ValueError):
        with_parameter(e, "alpha", 1)


def test_single_point_sweep_equals_batch():
    e = quick("nmplus", runs=2)
    [(v, s)] = sweep(e, "t_r_over_dt", [0])
    b = run_batch(e)
    assert v == 0
    assert [t.samples for t in s.traces] == [t.samples for t in b.traces]


def test_sweep_points_use_distinct_streams():
    e = quick("nmplus", runs=1)
    (_, a), (_, b) = sweep(e, "noise_sigma", [0, 0])
    assert a.traces[0].samples != b.traces[0].samples


def test_parallel_equals_serial():
    e = quick("nmplus", runs=2)
    a, b = run_batch(e, workers=1), run_batch(e, workers=2)
    assert [t.samples for t in a.traces] == [t.samples for t in b.traces]
