from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from closedloop.bench import bell_benchmark, make_oracle, run_single
from closedloop.measure import MeasuredFidelity, MeasurementChannel
from closedloop.optim import (
    DeConfig, GrapeConfig, NmplusConfig, ObjectiveOracle, StoppingRule, de_crossover, de_mutate,
    de_run, grape_measure_gradient, grape_run, nm_hyperplane_direction, nm_regular_simplex,
    nmplus_run, stopping_rule,
)
from closedloop.optim.trace import EVAL_BUDGET_EXHAUSTED, MAX_ITERATIONS, THRESHOLD_REACHED
from closedloop.qsim import (
    SpinSystem, basis_state, bell_target, evolve, evolve_with_insertion, local_rotation,
    pulse_waveform, state_fidelity,
)

NO_STOP = StoppingRule(None, None)


class BowlOracle:
    """Synthetic fidelity 1 - |u - c|^2 / scale, charging 3 per measurement."""

    def __init__(self, p, centre=None, scale=1e4, flat=False):
        self.system = SimpleNamespace(n_params=p, dt=1e-3)
        self.centre = np.zeros(p) if centre is None else np.asarray(centre, float)
        self.scale = scale
        self.flat = flat
        self.evals = 0
        self.submitted = []

    def exact(self, u):
        return 0.5 if self.flat else 1 - np.sum((np.asarray(u) - self.centre) ** 2) / self.scale

    def evaluate(self, u):
        self.evals += 3
        self.submitted.append(np.array(u))
        return MeasuredFidelity(self.exact(u), 3)

    def measure_insertions(self, u):
        p = self.system.n_params
        self.evals += 6 * p
        return np.full(p, 0.3), np.full(p, 0.3)


def bench_oracle(**kw):
    exp = bell_benchmark("grape", **kw)
    return make_oracle(exp, np.random.default_rng(0))


# ---------------------------------------------------------------- gradient

def test_insertion_layout_matches_reference(bell_system, rng):
    oracle = bench_oracle()
    u = rng.uniform(-50, 50, 40)
    states = oracle.insertion_states(u)
    wf = pulse_waveform(bell_system, u)
    rho0 = basis_state([0, 0])
    for (c, axis, qubit) in [(0, "x", 1), (1, "y", 1), (2, "x", 2), (3, "y", 2)]:
        for m in (1, 5, 10):
            for k, sign in enumerate("+-"):
                ref = evolve_with_insertion(bell_system, wf, rho0, m,
                                            local_rotation(axis, sign, qubit, 2))
                np.testing.assert_allclose(states[c, m - 1, k], ref, atol=1e-12)


def test_evaluate_with_insertion(rng):
    oracle = bench_oracle()
    u = rng.uniform(-50, 50, 40)
    before = oracle.evals
    f = oracle.evaluate_with_insertion(u, 3, "y", "-", 2)
    assert oracle.evals == before + 3
    f_plus, f_minus = oracle.measure_insertions(u)
    # pulse layout: channel y2 is flat block 3
    assert f_minus[3 * 10 + 2] == pytest.approx(f.value, abs=1e-14)
    with pytest.raises(ValueError):
        oracle.evaluate_with_insertion(u, 0, "x", "+", 1)


def test_gradient_symmetric_insertions_vanish():
    g = grape_measure_gradient(BowlOracle(6), np.zeros(6))
    assert not g.any()


def test_gradient_charges_240(rng):
    oracle = bench_oracle()
    grape_measure_gradient(oracle, rng.uniform(-50, 50, 40))
    assert oracle.evals == 240


def test_gradient_converges_to_derivative_with_slice_refinement(rng):
    # the insertion estimate is first order in dt*|H|: scaled by 2 pi it
    # approaches the exact derivative as the slices get shorter
    u10 = rng.uniform(-50, 50, 40)
    errs = []
    for M in (10, 20, 40):
        oracle = bench_oracle(slice_count=M)
        u = np.repeat(u10.reshape(4, 10), M // 10, axis=1).reshape(-1)
        g = 2 * np.pi * grape_measure_gradient(oracle, u)
        h = 1e-3
        fd = np.array([(oracle.exact(u + h * e) - oracle.exact(u - h * e)) / (2 * h)
                       for e in np.eye(u.size)])
        errs.append(np.abs(g - fd).max() / np.abs(fd).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.6 * errs[0]


# ---------------------------------------------------------------- GRAPE

def test_grape_config_validation():
    with pytest.raises(ValueError):
        GrapeConfig(lambda0=0)
    with pytest.raises(ValueError):
        GrapeConfig(schedule="armijo")
    assert GrapeConfig().step(3) == pytest.approx(2e4 / 8)
    assert GrapeConfig().step(100) == GrapeConfig().step(40)


def test_grape_zero_gradient_is_flat():
    oracle = BowlOracle(4, centre=np.ones(4))
    u0 = np.array([3.0, -2.0, 0.5, 1.0])
    tr = grape_run(oracle, GrapeConfig(max_iterations=5), u0, NO_STOP)
    np.testing.assert_array_equal(tr.terminal_pulse, u0)
    assert len({s.measured_fidelity for s in tr.samples}) == 1
    assert tr.iterations == 5 and tr.stop_reason == MAX_ITERATIONS


@pytest.mark.parametrize("schedule", ["adaptive", "geometric"])
def test_grape_eval_audit(rng, schedule):
    oracle = bench_oracle()
    tr = grape_run(oracle, GrapeConfig(max_iterations=3, schedule=schedule),
                   rng.uniform(-50, 50, 40), NO_STOP)
    evs = [s.cum_evals for s in tr.samples]
    assert evs[0] == 3
    assert np.all(np.diff(evs) == 243)
    assert tr.total_evals == 3 + 3 * 243


def test_grape_improves_benchmark():
    tr = run_single(bell_benchmark("grape", max_iterations=15), 1)
    assert tr.final_exact > tr.samples[0].exact_fidelity
    assert tr.final_exact > 0.9


# ---------------------------------------------------------------- NMplus simplex

def test_regular_simplex_p2():
    v = nm_regular_simplex(2, np.zeros(2), np.full((2, 2), np.sqrt(2)))
    s3 = np.sqrt(3)
    np.testing.assert_allclose(v, [[0, 0], [s3 + 1, s3 - 1], [s3 - 1, s3 + 1]], atol=1e-14)


def test_regular_simplex_p1():
    v = nm_regular_simplex(1, np.zeros(1), np.ones((1, 1)))
    np.testing.assert_allclose(v, [[0.0], [np.sqrt(2)]], atol=1e-15)


def test_regular_simplex_is_regular():
    p = 5
    v = nm_regular_simplex(p, np.zeros(p), np.full((p, p), 3.0))
    d = np.linalg.norm(v[:, None] - v[None], axis=-1)[np.triu_indices(p + 1, 1)]
    np.testing.assert_allclose(d, d[0], rtol=1e-12)


def test_regular_simplex_clipped():
    v = nm_regular_simplex(3, np.zeros(3), np.full((3, 3), 50.0), (-50, 50))
    assert v.max() <= 50


def test_zero_scale_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        nmplus_run(BowlOracle(2), NmplusConfig(), NO_STOP, 0,
                   initial_simplex=nm_regular_simplex(2, np.zeros(2), np.zeros((2, 2))))


def test_hyperplane_p1():
    a = nm_hyperplane_direction([[0.0], [2.0]], [1.0, 5.0])
    np.testing.assert_allclose(a, [2.0])
    assert 0 - 3 * a[0] == pytest.approx(-6.0)


def test_hyperplane_flat():
    v = nm_regular_simplex(3, np.zeros(3), np.ones((3, 3)))
    np.testing.assert_allclose(nm_hyperplane_direction(v, np.full(4, 0.7)), 0, atol=1e-14)


def test_hyperplane_singular_returns_none():
    assert nm_hyperplane_direction([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], [0, 1, 2]) is None


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 8))
def test_hyperplane_recovers_linear_slope(seed, p):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-50, 50, (p + 1, p))
    c, b = rng.normal(size=p), rng.normal()
    a = nm_hyperplane_direction(verts, verts @ c + b)
    if a is not None:
        np.testing.assert_allclose(a, c, atol=1e-10 * max(1, np.linalg.cond(
            np.hstack([np.ones((p + 1, 1)), verts]) / 1e4)))


# ---------------------------------------------------------------- NMplus run

def _nm_audit(tr, p):
    assert sum(w for _, _, w, _ in tr.branches) + (p + 1) == tr.total_evals // 3
    for _, branch, w, _ in tr.branches:
        if branch == "reflect":
            assert w == 1
        elif branch in ("expand", "expand_reject", "contract_outside", "contract_inside"):
            assert w == 2
        elif branch.startswith("shrink"):
            assert w == 2 + p


def test_nmplus_bowl_monotone_and_audited():
    oracle = BowlOracle(2, centre=[10.0, -20.0])
    tr = nmplus_run(oracle, NmplusConfig(max_iterations=60), NO_STOP, 4)
    best = [s.measured_fidelity for s in tr.samples]
    assert np.all(np.diff(best) >= 0)
    assert tr.final_exact > best[0]
    _nm_audit(tr, 2)


def test_nmplus_inside_contraction_can_cycle_in_low_dimension():
    # inside contraction is taken about the best vertex and accepted whenever
    # f_c <= f_r, so in 2-D the simplex can alternate between two points
    oracle = BowlOracle(2, centre=[10.0, -20.0])
    tr = nmplus_run(oracle, NmplusConfig(max_iterations=60), NO_STOP, 4)
    assert {b for _, b, _, _ in tr.branches[-10:]} == {"contract_inside"}
    tail = np.array(oracle.submitted[-8:])
    np.testing.assert_array_equal(tail[::2], np.repeat(tail[:1], 4, axis=0))


def test_nmplus_benchmark_audit_and_bounds():
    exp = bell_benchmark("nmplus", max_iterations=120)
    oracle = make_oracle(exp, np.random.default_rng(1))
    seen = []
    orig = oracle.evaluate
    oracle.evaluate = lambda u: (seen.append(np.array(u)), orig(u))[1]
    tr = nmplus_run(oracle, exp.config, NO_STOP, 3)
    _nm_audit(tr, 40)
    seen = np.array(seen)
    assert seen.min() >= -50 and seen.max() <= 50
    assert np.all(np.diff([s.measured_fidelity for s in tr.samples]) >= 0)


def test_nmplus_literal_step_mode_runs():
    tr = nmplus_run(BowlOracle(3, centre=[1, 2, 3]), NmplusConfig(max_iterations=30, step_norm="none"),
                    NO_STOP, 0)
    _nm_audit(tr, 3)


def test_nmplus_config_validation():
    for kw in (dict(alpha=0), dict(beta=1), dict(gamma_exp=1), dict(delta=0), dict(lo=1, hi=0),
               dict(step_norm="unit")):
        with pytest.raises(ValueError):
            NmplusConfig(**kw)


# ---------------------------------------------------------------- DE

def test_de_mutate_example():
    pop = np.array([[10, 0], [5, 5], [0, 0], [1, 1], [0, 0], [7, 7], [9, 9]], dtype=float)

    class Fixed:
        def choice(self, others, size, replace):
            return np.array([1, 2, 3, 4])

    np.testing.assert_allclose(de_mutate(pop, 0, 6, 0.6, Fixed()), [13.6, 3.6])


def test_de_mutate_zero_weight_and_cancelling(rng):
    pop = rng.uniform(-50, 50, (10, 5))
    np.testing.assert_array_equal(de_mutate(pop, 3, 0, 0.0, rng), pop[3])
    same = np.tile(rng.uniform(-50, 50, 5), (10, 1))
    same[4] = rng.uniform(-50, 50, 5)
    donor = de_mutate(same, 4, 0, 0.9, rng)
    np.testing.assert_allclose(donor, same[4], atol=1e-12)


def test_de_mutate_indices_distinct_and_exclude_target(rng):
    pop = np.arange(10, dtype=float)[:, None] * 10.0 ** np.arange(4)[None]
    for _ in range(200):
        used = []

        class Spy:
            def choice(self, others, size, replace):
                r = rng.choice(others, size=size, replace=replace)
                used.append(r)
                return r

        de_mutate(pop, 0, 7, 0.6, Spy())
        r = used[0]
        assert len(set(r)) == 4 and 7 not in r


def test_de_mutate_population_too_small(rng):
    with pytest.raises(ValueError):
        de_mutate(np.zeros((5, 3)), 0, 1, 0.6, rng)


def test_de_repair_within_bounds(rng):
    pop = rng.uniform(-50, 50, (10, 40))
    for repair in ("midpoint", "clip"):
        for i in range(10):
            d = de_mutate(pop, 0, i, 3.0, rng, (-50, 50), repair)
            assert d.min() >= -50 and d.max() <= 50


def test_de_crossover_extremes(rng):
    t, d = np.zeros(40), np.ones(40)
    np.testing.assert_array_equal(de_crossover(t, d, 1.0, rng), d)
    for _ in range(20):
        assert de_crossover(t, d, 0.0, rng).sum() == 1
    with pytest.raises(ValueError):
        de_crossover(np.zeros(3), np.zeros(4), 0.5, rng)


def test_de_crossover_binomial_mean(rng):
    t, d = np.zeros(40), np.ones(40)
    counts = [de_crossover(t, d, 0.95, rng).sum() for _ in range(10_000)]
    # j_rand is always donor; the other 39 are donor with prob Cr, plus
    # j_rand coinciding with a draw that was already donor
    expected = 0.95 * 39 + 1
    assert abs(np.mean(counts) - expected) < 0.5


def test_de_eval_audit_and_monotone():
    exp = bell_benchmark("de", max_iterations=4)
    oracle = make_oracle(exp, np.random.default_rng(2))
    tr = de_run(oracle, exp.config, NO_STOP, np.random.default_rng(5))
    by_gen = {}
    for s in tr.samples:
        by_gen[s.iteration] = s.cum_evals
    assert by_gen[0] == 30
    assert [by_gen[k] - by_gen[k - 1] for k in range(1, 5)] == [60] * 4
    assert np.all(np.diff([s.measured_fidelity for s in tr.samples]) >= 0)


def test_de_config_validation():
    for kw in (dict(Pn=5), dict(Cr=1.5), dict(lo=1, hi=0), dict(bound_repair="wrap")):
        with pytest.raises(ValueError):
            DeConfig(**kw)


# ---------------------------------------------------------------- stopping

def test_stopping_rule_order():
    rule = stopping_rule(1e-3, 100_000, 15)
    assert rule.check(0.9992, 4000) == THRESHOLD_REACHED
    assert rule.check(0.5, 100_001) == EVAL_BUDGET_EXHAUSTED
    assert rule.check(0.5, 100_000) is None
    assert rule.check(0.9995, 200_000, 20) == THRESHOLD_REACHED
    assert rule.check(None, 10, 15) == MAX_ITERATIONS


def test_stopping_flat_trace_exhausts_budget():
    tr = nmplus_run(BowlOracle(2, flat=True), NmplusConfig(max_iterations=None),
                    StoppingRule(1e-3, 300), 0)
    assert tr.stop_reason == EVAL_BUDGET_EXHAUSTED
    assert tr.total_evals > 300


def test_threshold_stop_is_immediate():
    oracle = BowlOracle(2, centre=[0.0, 0.0])
    tr = nmplus_run(oracle, NmplusConfig(), StoppingRule(0.5, None), 0,
                    initial_simplex=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert tr.succeeded and tr.total_evals == 3


def test_stopping_validation():
    with pytest.raises(ValueError):
        StoppingRule(0.0)
    with pytest.raises(ValueError):
        StoppingRule(1e-3, 0)
