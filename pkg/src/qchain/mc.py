"""Monte Carlo engine.

Attempt counts are drawn per link, and the durations and memory idle times
follow exactly from them.  ``estimate`` runs the compiled or vectorised
kernels; the ``simulate_*`` functions are the readable single-delivery
versions of the same rules and take any ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .analytic import CUTOFF_GUARD, InfeasibleCutoffError, cutoff_limits, expected_rounds, round_trip
from .kernels import POLICIES, STATUS_BUDGET, STATUS_OK, SampleBatch, parallel_times, sample_parallel, sample_sequential
from .noise import MODES, ChainSpec, PerformanceReport, assemble_report, infeasible_report
from .rng import MC_SALT, seed_key

PROTOCOLS = ("sequential", "parallel")


@dataclass
class AttemptRecord:
    attempt_counts: tuple
    duration_s: float
    idle_fidelity_s: float
    idle_skr_s: float
    success: bool = True
    rounds: int = 1
    # per-memory detail; repeater k's entries sit at index k - 1
    swap_times: tuple = ()
    t_left: tuple = ()
    t_right: tuple = ()
    t_a: float = 0.0
    t_b: float = 0.0


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 100_000
    seed: int = 0
    mode: str = "skr"
    classical_delay: bool = True
    policy: str = "full"  # time charged to a failed parallel attempt
    failure_charge: str = "cutoff"  # time charged to a failed sequential window
    backend: Optional[str] = None
    # give up when deliveries need more than this many rounds or attempts on average
    max_attempts_per_sample: int = 2000

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.failure_charge not in ("cutoff", "window"):
            raise ValueError("failure_charge must be 'cutoff' or 'window'")
        if self.max_attempts_per_sample < 1:
            raise ValueError("max_attempts_per_sample must be >= 1")


def sample_geometric(p: float, rng: np.random.Generator) -> int:
    """Number of attempts up to and including the first success."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if p == 1.0:
        return 1
    u = 1.0 - rng.random()  # (0, 1]
    return 1 + int(math.floor(math.log(u) / math.log1p(-p)))


# ------------------------------------------------------- per-attempt rules


def sequential_record(counts: Sequence[int], taus: Sequence[float], rt: int = 2) -> AttemptRecord:
    """Times of one sequential round that succeeded with attempt counts ``counts``."""
    ns = [int(x) for x in counts]
    taus = [float(t) for t in taus]
    cf = rt - 1
    tau_e2e = sum(taus)
    duration = rt * sum(n * t for n, t in zip(ns, taus))
    t_left = tuple(rt * ns[k] * taus[k] for k in range(1, len(ns)))
    t_right = tuple(rt * taus[k] for k in range(1, len(ns)))
    t_a = duration - rt * (ns[0] - 1) * taus[0]
    t_b = cf * tau_e2e
    idle_skr = sum(t_left) + sum(t_right)
    return AttemptRecord(
        attempt_counts=tuple(ns),
        duration_s=duration,
        idle_fidelity_s=idle_skr + t_a + t_b,
        idle_skr_s=idle_skr,
        t_left=t_left,
        t_right=t_right,
        t_a=t_a,
        t_b=t_b,
    )


def parallel_record(counts: Sequence[int], taus: Sequence[float], rt: int = 2) -> AttemptRecord:
    """Times of one parallel attempt with attempt counts ``counts``."""
    t = parallel_times(np.asarray([counts]), np.asarray(taus, dtype=float), rt)
    t_left = tuple(float(x) for x in t["t_left"][0])
    t_right = tuple(float(x) for x in t["t_right"][0])
    idle_skr = sum(t_left) + sum(t_right)
    t_a, t_b = float(t["t_a"][0]), float(t["t_b"][0])
    return AttemptRecord(
        attempt_counts=tuple(int(x) for x in counts),
        duration_s=float(t["duration"][0]),
        idle_fidelity_s=idle_skr + t_a + t_b,
        idle_skr_s=idle_skr,
        swap_times=tuple(float(x) for x in t["swap"][0]),
        t_left=t_left,
        t_right=t_right,
        t_a=t_a,
        t_b=t_b,
    )


def attempt_rule(protocol: str, classical_delay: bool = True) -> Callable:
    """``rule(counts, taus) -> AttemptRecord`` for one protocol and signalling model."""
    rt = round_trip(classical_delay)
    if protocol == "sequential":
        return lambda counts, taus: sequential_record(counts, taus, rt)
    if protocol == "parallel":
        return lambda counts, taus: parallel_record(counts, taus, rt)
    raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")


def classical_delay_off_transform(chain: ChainSpec, protocol: str) -> Callable:
    """Attempt-time rule with instantaneous classical signalling, bound to ``chain``."""
    rule = attempt_rule(protocol, classical_delay=False)
    return lambda counts: rule(counts, chain.taus)


def _draw_counts(chain: ChainSpec, rng) -> list:
    return [sample_geometric(float(p), rng) for p in chain.probs]


def simulate_sequential_attempt(chain: ChainSpec, rng, classical_delay: bool = True) -> AttemptRecord:
    return sequential_record(_draw_counts(chain, rng), chain.taus, round_trip(classical_delay))


def simulate_sequential_cut(
    chain: ChainSpec,
    rng,
    classical_delay: bool = True,
    failure_charge: str = "cutoff",
    max_rounds: int = 10_000_000,
) -> AttemptRecord:
    """Restart-on-cutoff renewal process, run until one delivery succeeds."""
    lim = cutoff_limits(chain, classical_delay)
    rt = round_trip(classical_delay)
    elapsed = 0.0
    for r in range(max_rounds):
        ns = []
        prefix = 0.0
        failed = None
        for k, p in enumerate(chain.probs):
            n = sample_geometric(float(p), rng)
            if k > 0 and n > lim.m[k]:
                failed = k
                break
            ns.append(n)
            prefix += n * chain.taus[k]
        if failed is None:
            rec = sequential_record(ns, chain.taus, rt)
            rec.duration_s += elapsed
            rec.rounds = r + 1
            return rec
        if failure_charge == "window":
            elapsed += rt * prefix + rt * lim.m[failed] * chain.taus[failed]
        else:
            elapsed += rt * prefix + chain.cutoff_s
    raise RuntimeError("no successful round within max_rounds")


def simulate_parallel_attempt(chain: ChainSpec, rng, classical_delay: bool = True) -> AttemptRecord:
    return parallel_record(_draw_counts(chain, rng), chain.taus, round_trip(classical_delay))


def cutoff_violation(rec: AttemptRecord, chain: ChainSpec, classical_delay: bool = True):
    """``(time, notice_delay)`` of the earliest memory expiry, or ``None``."""
    if chain.cutoff_s is None:
        return None
    rt = round_trip(classical_delay)
    cf = rt - 1
    tc = chain.cutoff_s * (1.0 + CUTOFF_GUARD)
    cum = np.cumsum(chain.taus)
    tau_e2e = cum[-1]
    ns = rec.attempt_counts
    best = None
    for k in range(1, len(ns)):
        d = cf * max(cum[k - 1], tau_e2e - cum[k - 1])
        arr = (rt * ns[k - 1] - cf) * chain.taus[k - 1]
        emit = rt * (ns[k] - 1) * chain.taus[k]
        for idle, load in ((rec.t_left[k - 1], arr), (rec.t_right[k - 1], emit)):
            if idle > tc:
                cand = (load + tc, d)
                if best is None or cand < best:
                    best = cand
    return best


def simulate_parallel_cut(
    chain: ChainSpec,
    rng,
    classical_delay: bool = True,
    policy: str = "full",
    max_attempts: int = 10_000_000,
) -> AttemptRecord:
    """Redraw whole parallel attempts until no repeater memory idles past the cutoff."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    elapsed = 0.0
    for a in range(max_attempts):
        rec = simulate_parallel_attempt(chain, rng, classical_delay)
        v = cutoff_violation(rec, chain, classical_delay)
        if v is None:
            rec.duration_s += elapsed
            rec.rounds = a + 1
            return rec
        if policy == "full":
            elapsed += rec.duration_s
        elif policy == "instant":
            elapsed += v[0]
        else:
            elapsed += v[0] + v[1]
    raise RuntimeError("no passing attempt within max_attempts")


# ---------------------------------------------------------------- estimation


def parallel_cutoff_feasible(chain: ChainSpec, classical_delay: bool = True) -> bool:
    """False when some repeater's right memory must always outlive the cutoff."""
    if chain.cutoff_s is None:
        return True
    rt = round_trip(classical_delay)
    tc = chain.cutoff_s * (1.0 + CUTOFF_GUARD)
    return bool(np.all(rt * chain.taus[1:] <= tc))


PILOT_SAMPLES = 200


def attempt_budget(n: int, per_sample: int) -> int:
    """Total rounds or attempts allowed for a batch of ``n`` deliveries."""
    return per_sample * n + 1_000_000


def run_batch(chain: ChainSpec, protocol: str, config: McConfig, start: int = 0,
              n: Optional[int] = None, record_counts: bool = False) -> Optional[SampleBatch]:
    """Raw per-delivery samples, or ``None`` when the cutoff can never be met.

    A batch whose deliveries need more than ``config.max_attempts_per_sample``
    rounds on average comes back with ``status == STATUS_BUDGET``.  Sequential
    batches are screened with the closed-form round count, parallel ones with
    a short pilot run on the first streams, so the outcome does not depend on
    the backend.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    n = config.n_samples if n is None else n
    key = seed_key(config.seed, MC_SALT)
    rt = round_trip(config.classical_delay)
    per = config.max_attempts_per_sample
    if protocol == "sequential":
        m = None
        if chain.cutoff_s is not None:
            try:
                m = np.array(cutoff_limits(chain, config.classical_delay).m)
            except InfeasibleCutoffError:
                return None
            if expected_rounds(chain, config.classical_delay) > per:
                return _over_budget()
        return sample_sequential(
            chain.taus, chain.probs, n, key, rt=rt, m=m,
            tau_cut=chain.cutoff_s if chain.cutoff_s is not None else math.inf,
            fail_window=config.failure_charge == "window", start=start,
            record_counts=record_counts, budget=attempt_budget(n, per), backend=config.backend,
        )
    if not parallel_cutoff_feasible(chain, config.classical_delay):
        return None
    kw = dict(rt=rt, tau_cut=chain.cutoff_s, policy=config.policy, backend=config.backend)
    if chain.cutoff_s is not None:
        n_pilot = min(n, PILOT_SAMPLES)
        pilot = sample_parallel(chain.taus, chain.probs, n_pilot, key, start=start,
                                budget=per * n_pilot, **kw)
        if pilot.status != STATUS_OK:
            return _over_budget()
    return sample_parallel(chain.taus, chain.probs, n, key, start=start,
                           record_counts=record_counts, budget=attempt_budget(n, per), **kw)


def _over_budget() -> SampleBatch:
    empty = np.zeros(0)
    return SampleBatch(empty, empty, empty, np.zeros(0, np.int64), None, STATUS_BUDGET)


def report_from_samples(chain: ChainSpec, batch: Optional[SampleBatch], mode: str) -> PerformanceReport:
    """Renewal-reward estimate: rate ``1 / mean(duration)``, decoherence averaged over deliveries."""
    if batch is None:
        return infeasible_report(chain, mode)
    if batch.status != STATUS_OK:
        return infeasible_report(chain, mode, status="budget_exceeded")
    n = len(batch)
    dur = batch.duration
    mean_t = float(np.mean(dur))
    idle = batch.idle_fidelity if mode == "fidelity" else batch.idle_skr
    if math.isinf(chain.tau_coh_s):
        dec = np.ones(n)
    else:
        dec = np.exp(-idle / chain.tau_coh_s)
    sd_t = float(np.std(dur, ddof=1)) if n > 1 else 0.0
    sd_d = float(np.std(dec, ddof=1)) if n > 1 else 0.0
    return assemble_report(
        chain,
        1.0 / mean_t,
        float(np.mean(dec)),
        mode=mode,
        n_samples=n,
        stderr_rate=sd_t / math.sqrt(n) / mean_t**2,
        stderr_decoherence=sd_d / math.sqrt(n),
    )


def estimate(chain: ChainSpec, protocol: str, config: McConfig) -> PerformanceReport:
    """Monte Carlo report in ``config.mode``; bit-identical for identical inputs."""
    return report_from_samples(chain, run_batch(chain, protocol, config), config.mode)


def estimate_modes(chain: ChainSpec, protocol: str, config: McConfig) -> dict:
    """Fidelity-mode and skr-mode reports computed from one shared set of samples."""
    batch = run_batch(chain, protocol, config)
    return {mode: report_from_samples(chain, batch, mode) for mode in MODES}
