import math

import numpy as np
import pytest
from conftest import make_chain
from hypothesis import given, settings
from hypothesis import strategies as st

from qchain.analytic import cutoff_limits, evaluate_sequential, mean_duration_cut
from qchain.kernels import STATUS_BUDGET, parallel_times, sample_parallel, sample_sequential
from qchain.mc import (
    McConfig,
    classical_delay_off_transform,
    estimate,
    estimate_modes,
    parallel_record,
    report_from_samples,
    run_batch,
    sample_geometric,
    sequential_record,
    simulate_parallel_attempt,
    simulate_parallel_cut,
    simulate_sequential_attempt,
    simulate_sequential_cut,
)
from qchain.noise import ChainSpec
from qchain.rng import MC_SALT, derive_seed, seed_key

counts_st = st.lists(st.integers(1, 60), min_size=2, max_size=7)


def taus_for(n, draw_seed):
    return np.random.default_rng(draw_seed).uniform(2.5e-5, 7.5e-4, n)


# ----------------------------------------------------------- geometric draws


def test_sample_geometric_examples():
    g = np.random.default_rng(1)
    assert all(sample_geometric(1.0, g) == 1 for _ in range(100))
    draws = np.array([sample_geometric(0.5, g) for _ in range(10**6)])
    assert abs(draws.mean() - 2.0) < 0.005
    draws = np.array([sample_geometric(0.1, g) for _ in range(10**6)])
    assert abs(np.mean(draws == 1) - 0.1) < 0.001
    with pytest.raises(ValueError):
        sample_geometric(0.0, g)


# ------------------------------------------------------------ attempt rules


def test_sequential_record_examples():
    rec = sequential_record([2, 3], [1e-3, 2e-3])
    assert rec.duration_s == pytest.approx(0.016)
    assert rec.idle_skr_s == pytest.approx(0.016)
    tau = 1e-4
    rec = sequential_record([1] * 4, [tau] * 4)
    assert rec.duration_s == pytest.approx(8 * tau)
    assert rec.idle_skr_s == pytest.approx(12 * tau)


@given(counts_st, st.integers(0, 1000))
def test_sequential_record_idle_forms(counts, s):
    taus = taus_for(len(counts), s)
    rec = sequential_record(counts, taus)
    tail = sum(n * t for n, t in zip(counts[1:], taus[1:]))
    assert rec.idle_fidelity_s == pytest.approx(3 * taus.sum() + 4 * tail, rel=1e-12)
    assert rec.idle_skr_s == pytest.approx(2 * sum((n + 1) * t for n, t in zip(counts[1:], taus[1:])), rel=1e-12)


def test_parallel_record_examples():
    tau = 3e-4
    rec = parallel_record([1, 1], [tau, tau])
    assert rec.swap_times == pytest.approx((2 * tau,))
    assert rec.duration_s == pytest.approx(3 * tau)
    assert rec.idle_fidelity_s == pytest.approx(8 * tau)
    for n in range(1, 7):
        assert parallel_record([1] * (n + 1), [tau] * (n + 1)).duration_s == pytest.approx((n + 2) * tau)


def test_delay_off_rules():
    ch = ChainSpec.from_lengths([20.0, 40.0, 60.0])
    seq = classical_delay_off_transform(ch, "sequential")
    assert seq([1, 1, 1]).duration_s == pytest.approx(ch.tau_e2e)
    assert seq([2, 1, 3]).duration_s == pytest.approx(float(np.dot([2, 1, 3], ch.taus)))
    uni = ChainSpec.from_lengths([50.0, 50.0])
    par = classical_delay_off_transform(uni, "parallel")
    assert par([1, 1]).duration_s == pytest.approx(uni.taus[0])
    rec = par([3, 2])
    assert rec.swap_times[0] == pytest.approx(max(3 * uni.taus[0], 2 * uni.taus[1]))
    with pytest.raises(ValueError):
        classical_delay_off_transform(uni, "bogus")


@given(counts_st, st.integers(0, 1000))
def test_parallel_idle_invariants(counts, s):
    taus = taus_for(len(counts), s)
    rec = parallel_record(counts, taus)
    t_l, t_r = np.array(rec.t_left), np.array(rec.t_right)
    assert np.all(t_l >= 0) and np.all(t_r >= 0) and rec.t_a >= 0 and rec.t_b >= 0
    assert rec.idle_skr_s <= rec.idle_fidelity_s
    # one branch of each swap-time max is tight
    for k in range(len(t_l)):
        assert t_l[k] == 0.0 or t_r[k] == pytest.approx(2 * taus[k + 1], rel=1e-12)


@given(counts_st, st.integers(0, 1000))
def test_parallel_idle_pair_identity(counts, s):
    taus = taus_for(len(counts), s)
    rec = parallel_record(counts, taus)
    for k in range(len(counts) - 1):
        lhs = rec.t_left[k] + rec.t_right[k]
        rhs = abs((2 * counts[k] - 1) * taus[k] - 2 * counts[k + 1] * taus[k + 1]) + 2 * taus[k + 1]
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-18)


# -------------------------------------------------------- readable samplers


def test_simulate_sequential_cut_trivial_probabilities():
    ch = ChainSpec.from_lengths([30.0, 30.0, 30.0], alpha_per_km=0.0, cutoff_s=0.01)
    g = np.random.default_rng(0)
    rec = simulate_sequential_cut(ch, g)
    ref = simulate_sequential_attempt(ch, g)
    assert rec.duration_s == ref.duration_s and rec.rounds == 1
    assert rec.attempt_counts == (1, 1, 1)


def test_simulate_sequential_cut_matches_recursion():
    ch = make_chain([0.2, 0.1, 0.15], [50.0, 100.0, 70.0], cutoff_s=0.004)
    g = np.random.default_rng(2)
    m = cutoff_limits(ch).m
    recs = [simulate_sequential_cut(ch, g) for _ in range(40000)]
    d = np.array([r.duration_s for r in recs])
    assert abs(d.mean() - mean_duration_cut(ch)) < 4 * d.std(ddof=1) / math.sqrt(len(d))
    assert all(r.attempt_counts[k] <= m[k] for r in recs for k in range(1, 3))


def test_simulate_parallel_cut_infinite_cutoff_is_plain_attempt():
    ch = ChainSpec.from_lengths([40.0, 60.0, 30.0], cutoff_s=1e9)
    a = simulate_parallel_cut(ch, np.random.default_rng(5))
    b = simulate_parallel_attempt(ch, np.random.default_rng(5))
    assert a.duration_s == b.duration_s and a.attempt_counts == b.attempt_counts


def test_parallel_cut_pass_rate_matches_enumeration():
    ch = make_chain([0.1, 0.1], [100.0, 100.0], cutoff_s=0.0035)
    grid = np.array([(a, b) for a in range(1, 200) for b in range(1, 200)])
    t = parallel_times(grid, ch.taus)
    ok = (t["t_left"][:, 0] <= ch.cutoff_s * (1 + 1e-12)) & (t["t_right"][:, 0] <= ch.cutoff_s * (1 + 1e-12))
    w = 0.1 * 0.9 ** (grid[:, 0] - 1) * 0.1 * 0.9 ** (grid[:, 1] - 1)
    p_pass = float(w[ok].sum())
    batch = sample_parallel(ch.taus, ch.probs, 100_000, seed_key(3, MC_SALT), tau_cut=ch.cutoff_s)
    rounds = batch.rounds.astype(float)
    # attempts per delivery are geometric with the pass probability
    assert abs(rounds.mean() - 1 / p_pass) < 4 * rounds.std(ddof=1) / math.sqrt(len(rounds))


# ----------------------------------------------------------- batch engines


def test_backends_bit_identical():
    for cut in (None, 0.01):
        ch = ChainSpec.from_lengths([20.0, 70.0, 45.0, 10.0], cutoff_s=cut)
        m = None if cut is None else np.array(cutoff_limits(ch).m)
        key = seed_key(9, MC_SALT)
        a = sample_sequential(ch.taus, ch.probs, 3000, key, m=m, tau_cut=cut or math.inf, backend="numba")
        b = sample_sequential(ch.taus, ch.probs, 3000, key, m=m, tau_cut=cut or math.inf, backend="numpy")
        assert np.array_equal(a.duration, b.duration) and np.array_equal(a.idle_fidelity, b.idle_fidelity)
        for policy in ("full", "instant", "classical"):
            a = sample_parallel(ch.taus, ch.probs, 3000, key, tau_cut=cut, policy=policy, backend="numba")
            b = sample_parallel(ch.taus, ch.probs, 3000, key, tau_cut=cut, policy=policy, backend="numpy")
            assert np.array_equal(a.duration, b.duration) and np.array_equal(a.idle_skr, b.idle_skr)
            assert np.array_equal(a.rounds, b.rounds)


def test_batch_split_matches_whole():
    ch = ChainSpec.from_lengths([30.0, 30.0, 30.0], cutoff_s=0.003)
    cfg = McConfig(n_samples=1000, seed=4)
    whole = run_batch(ch, "parallel", cfg)
    tail = run_batch(ch, "parallel", cfg, start=600, n=400)
    assert np.array_equal(whole.duration[600:], tail.duration)


def test_estimate_deterministic():
    ch = ChainSpec.from_lengths([40.0, 80.0, 30.0], tau_coh_s=0.05, cutoff_s=0.02)
    for proto in ("sequential", "parallel"):
        cfg = McConfig(n_samples=5000, seed=11)
        assert estimate(ch, proto, cfg) == estimate(ch, proto, cfg)
        assert estimate(ch, proto, cfg) != estimate(ch, proto, McConfig(n_samples=5000, seed=12))


@pytest.mark.parametrize("seed", range(5))
def test_sequential_estimate_matches_analytic(seed):
    r = np.random.default_rng(100 + seed)
    n = int(r.integers(0, 6))
    ch = ChainSpec.from_lengths(r.uniform(5, 100, n + 1), tau_coh_s=0.02)
    for chain in (ch, ch.with_cutoff(0.01)):
        reps = estimate_modes(chain, "sequential", McConfig(n_samples=50_000, seed=seed))
        for mode, rep in reps.items():
            ref = evaluate_sequential(chain, mode)
            assert abs(rep.ebit_rate_hz - ref.ebit_rate_hz) <= 3.5 * rep.stderr_rate
            if rep.stderr_fidelity > 0:
                assert abs(rep.fidelity_e2e - ref.fidelity_e2e) <= 3.5 * rep.stderr_fidelity


def test_parallel_rate_beats_sequential():
    ch = ChainSpec.uniform(200.0, 2)
    cfg = McConfig(n_samples=50_000, seed=3)
    assert estimate(ch, "parallel", cfg).ebit_rate_hz >= estimate(ch, "sequential", cfg).ebit_rate_hz


@pytest.mark.parametrize("protocol", ["sequential", "parallel"])
def test_delay_off_dominates_per_sample(protocol):
    ch = ChainSpec.from_lengths([30.0, 60.0, 45.0], tau_coh_s=0.05)
    on = run_batch(ch, protocol, McConfig(n_samples=5000, seed=8))
    off = run_batch(ch, protocol, McConfig(n_samples=5000, seed=8, classical_delay=False))
    assert np.all(off.duration < on.duration)
    assert np.all(off.idle_fidelity <= on.idle_fidelity)


def test_cutoff_constraints_hold_on_successes():
    ch = ChainSpec.from_lengths([40.0, 60.0, 20.0, 50.0], cutoff_s=0.004)
    cfg = McConfig(n_samples=5000, seed=2, policy="classical")
    par = run_batch(ch, "parallel", cfg, record_counts=True)
    t = parallel_times(par.counts, ch.taus)
    assert np.all(t["t_left"] <= 0.004 * (1 + 1e-12)) and np.all(t["t_right"] <= 0.004 * (1 + 1e-12))
    seq = run_batch(ch, "sequential", cfg, record_counts=True)
    m = np.array(cutoff_limits(ch).m)
    assert np.all(seq.counts[:, 1:] <= m[1:])


def test_cutoff_raises_success_conditioned_decoherence():
    ch = ChainSpec.from_lengths([40.0, 60.0, 20.0], tau_coh_s=0.01)
    cfg = McConfig(n_samples=100_000, seed=6)
    plain = estimate(ch, "parallel", cfg)
    cut = estimate(ch.with_cutoff(0.002), "parallel", cfg)
    assert cut.fidelity_e2e >= plain.fidelity_e2e


def test_infeasible_and_budget_statuses():
    ch = ChainSpec.from_lengths([100.0, 100.0, 100.0], cutoff_s=1e-4)
    assert estimate(ch, "sequential", McConfig(n_samples=100)).status == "infeasible_cutoff"
    assert estimate(ch, "parallel", McConfig(n_samples=100)).status == "infeasible_cutoff"
    tight = ChainSpec.from_lengths([100.0, 150.0, 150.0], cutoff_s=0.0016)
    cfg = McConfig(n_samples=1000, max_attempts_per_sample=5)
    for proto in ("sequential", "parallel"):
        rep = estimate(tight, proto, cfg)
        assert rep.status == "budget_exceeded" and rep.ebit_rate_hz == 0.0
    assert run_batch(tight, "parallel", cfg).status == STATUS_BUDGET
    assert report_from_samples(ch, None, "skr").infeasible


def test_mcconfig_validation():
    with pytest.raises(ValueError):
        McConfig(n_samples=0)
    with pytest.raises(ValueError):
        McConfig(policy="sometimes")
    with pytest.raises(ValueError):
        McConfig(mode="rate")


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(5, 100), min_size=1, max_size=4), st.integers(0, 3), st.floats(5, 60))
def test_rate_monotone_in_length(lengths, idx, extra):
    longer = list(lengths)
    longer[idx % len(lengths)] += extra
    seed = derive_seed(1, len(lengths), idx)
    cfg = McConfig(n_samples=4000, seed=seed)
    a = estimate(ChainSpec.from_lengths(lengths), "parallel", cfg)
    b = estimate(ChainSpec.from_lengths(longer), "parallel", cfg)
    assert b.ebit_rate_hz <= a.ebit_rate_hz + 3 * math.hypot(a.stderr_rate, b.stderr_rate)
