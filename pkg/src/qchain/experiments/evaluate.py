"""Engine dispatch, cutoff search and grid-cell scheduling shared by the experiments.

Sampled deliveries do not depend on the coherence time or on the F/mu noise
parameters, so one batch per (link lengths, p_link, cutoff, protocol) serves
every coherence time of a cell.  That is what makes the heatmap and the
boundary bisection affordable with the sampling engines.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..analytic import evaluate_sequential, round_trip
from ..des import report_from_des, simulate_for
from ..mc import McConfig, report_from_samples, run_batch
from ..noise import MODES, ChainSpec, PerformanceReport
from .config import ExperimentConfig

THREADS_ENV = "QCHAIN_THREADS"
NO_CUTOFF = math.inf  # stands for "cutoff disabled" in candidate lists and tie-breaks


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def map_cells(fn: Callable, cells: Sequence, threads: Optional[int] = None) -> list:
    """``[fn(i, cell) ...]`` in grid order, evaluated on a thread pool."""
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(cells) <= 1:
        return [fn(i, c) for i, c in enumerate(cells)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(cells)), cells))


def as_cutoff(value: float) -> Optional[float]:
    return None if math.isinf(value) else float(value)


@dataclass(frozen=True)
class Evaluator:
    """Evaluates chains under one experiment's engine, delay and policy settings."""

    engine: Optional[str] = None
    n_samples: int = 100_000
    classical_delay: bool = True
    parallel_policy: str = "classical"
    max_restarts: int = 2000

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, classical_delay: Optional[bool] = None) -> "Evaluator":
        delay = cfg.classical_delay if classical_delay is None else classical_delay
        return cls(cfg.engine, cfg.n_samples, delay, cfg.parallel_policy, cfg.max_restarts)

    def engine_for(self, protocol: str) -> str:
        if self.engine is not None:
            return self.engine
        return "analytic" if protocol == "sequential" else "mc"

    def _mc_config(self, seed: int) -> McConfig:
        return McConfig(n_samples=self.n_samples, seed=seed, classical_delay=self.classical_delay,
                        policy=self.parallel_policy, max_attempts_per_sample=self.max_restarts)

    def sampler(self, chain: ChainSpec, protocol: str, seed: int) -> Callable[[ChainSpec, str], PerformanceReport]:
        """Returns ``report(chain_variant, mode)`` for variants differing only in tau_coh or noise."""
        engine = self.engine_for(protocol)
        if engine == "analytic":
            if protocol != "sequential":
                raise ValueError("the analytic engine only covers the sequential protocol")
            delay = self.classical_delay
            return lambda ch, mode: evaluate_sequential(ch, mode, delay)
        if engine == "mc":
            batch = run_batch(chain, protocol, self._mc_config(seed))
            return lambda ch, mode: report_from_samples(ch, batch, mode)
        res = simulate_for(chain, protocol, self._mc_config(seed))
        return lambda ch, mode: report_from_des(ch, res, mode)

    def reports(self, chain: ChainSpec, protocol: str, seed: int,
                tau_cohs: Optional[Sequence[float]] = None) -> List[Dict[str, PerformanceReport]]:
        """Both-mode reports for ``chain`` at each coherence time (default: the chain's own)."""
        tau_cohs = [chain.tau_coh_s] if tau_cohs is None else list(tau_cohs)
        report = self.sampler(chain, protocol, seed)
        out = []
        for t in tau_cohs:
            ch = chain.with_tau_coh(t)
            out.append({mode: report(ch, mode) for mode in MODES})
        return out

    def report(self, chain: ChainSpec, protocol: str, seed: int) -> Dict[str, PerformanceReport]:
        return self.reports(chain, protocol, seed)[0]


def cutoff_grid(chain: ChainSpec, *, max_multiples: int = 40, log_points: int = 30,
                cap_factor: float = 10.0, include_no_cutoff: bool = True,
                classical_delay: bool = True) -> List[float]:
    """Sorted candidate cutoffs, with ``NO_CUTOFF`` last when included.

    Exact multiples of each link's attempt cycle hit the steps of the
    sequential rate; the log-spaced points cover the range in between.
    """
    rt = round_trip(classical_delay)
    cycles = [rt * float(t) for t in chain.taus]
    cap = cap_factor * max(c / float(p) for c, p in zip(cycles, chain.probs))
    vals = set()
    for c in cycles:
        for k in range(1, max_multiples + 1):
            v = k * c
            if v <= cap:
                vals.add(v)
    lo = min(cycles)
    if log_points >= 2 and cap > lo:
        vals.update(float(v) for v in np.geomspace(lo, cap, log_points))
    elif log_points == 1:
        vals.add(cap)
    out = sorted(vals)
    if include_no_cutoff:
        out.append(NO_CUTOFF)
    return out


def search_kwargs(grid: dict, classical_delay: bool) -> dict:
    return dict(max_multiples=grid["max_multiples"], log_points=grid["log_points"],
                cap_factor=grid["cap_factor"], include_no_cutoff=grid["include_no_cutoff"],
                classical_delay=classical_delay)


def argmax_cutoff(cutoffs: Sequence[float], skrs: Sequence[float]) -> int:
    """Index of the largest SKR; ties go to the smallest cutoff (``NO_CUTOFF`` is largest)."""
    best = 0
    for i in range(1, len(cutoffs)):
        if skrs[i] > skrs[best] or (skrs[i] == skrs[best] and cutoffs[i] < cutoffs[best]):
            best = i
    return best


@dataclass(frozen=True)
class CutoffScan:
    """SKR-mode and fidelity-mode reports per (cutoff, tau_coh)."""

    cutoffs: tuple
    tau_cohs: tuple
    reports: tuple  # reports[i][j] -> {mode: PerformanceReport}

    def skr(self, j: int) -> np.ndarray:
        return np.array([self.reports[i][j]["skr"].skr_hz for i in range(len(self.cutoffs))])

    def best(self, j: int) -> int:
        return argmax_cutoff(self.cutoffs, self.skr(j))

    def at(self, i: int, j: int) -> Dict[str, PerformanceReport]:
        return self.reports[i][j]

    def index_of(self, cutoff: float) -> int:
        return self.cutoffs.index(cutoff)


def scan_cutoffs(ev: Evaluator, chain: ChainSpec, protocol: str, cutoffs: Sequence[float],
                 tau_cohs: Sequence[float], seed: int) -> CutoffScan:
    """Evaluate every cutoff with the same seed, so the comparison uses common random numbers."""
    rows = []
    for c in cutoffs:
        rows.append(tuple(ev.reports(chain.with_cutoff(as_cutoff(c)), protocol, seed, tau_cohs)))
    return CutoffScan(tuple(cutoffs), tuple(tau_cohs), tuple(rows))


def min_positive_tau_coh(report_at: Callable[[float], float], lo: float, hi: float,
                         rel_tol: float) -> float:
    """Smallest coherence time in ``[lo, hi]`` with positive SKR, by log-scale bisection.

    ``report_at`` must be non-decreasing in its argument.  Returns ``inf`` when
    even ``hi`` gives no key and ``lo`` when ``lo`` already does.
    """
    if not report_at(hi) > 0.0:
        return math.inf
    if report_at(lo) > 0.0:
        return lo
    a, b = lo, hi
    while b / a - 1.0 > rel_tol:
        mid = math.sqrt(a * b)
        if report_at(mid) > 0.0:
            b = mid
        else:
            a = mid
    return b
