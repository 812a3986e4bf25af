"""Closed-form moments of the sequential protocol.

Attempt counts on each link are independent geometric variables, so the mean
duration and the mean of ``exp(-idle / tau_coh)`` factor into per-link
geometric sums.  With a cutoff, links ``k >= 2`` get at most ``m_k`` tries per
round and a failed round restarts the chain from the sender.

``classical_delay=False`` removes all acknowledgement and outcome signalling
time; one attempt then costs a single photon flight ``tau`` instead of the
round trip ``2 tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .noise import ChainSpec, PerformanceReport, assemble_report, infeasible_report

CUTOFF_GUARD = 1e-12  # relative slack on tau_cut for float boundary cases
FAILURE_CHARGES = ("cutoff", "window")


class InfeasibleCutoffError(ValueError):
    """The cutoff is shorter than a single attempt on some link past the first."""


@dataclass(frozen=True)
class CutoffLimits:
    m: tuple

    def __post_init__(self):
        if any(int(x) < 0 for x in self.m):
            raise ValueError("attempt limits must be non-negative")


@dataclass(frozen=True)
class AnalyticResult:
    mean_duration_s: float
    mean_decoherence_fidelity: float
    mean_decoherence_skr: float

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.mean_duration_s


def round_trip(classical_delay: bool = True) -> int:
    """Attempt cycle length in units of the link's one-way time."""
    return 2 if classical_delay else 1


def attempt_limit(tau_cut: float, cycle_s: float) -> int:
    """Largest ``m`` with ``m * cycle_s <= tau_cut`` (up to the float guard)."""
    return int(math.floor(tau_cut * (1.0 + CUTOFF_GUARD) / cycle_s))


def cutoff_limits(chain: ChainSpec, classical_delay: bool = True) -> CutoffLimits:
    if chain.cutoff_s is None:
        raise ValueError("chain has no cutoff")
    rt = round_trip(classical_delay)
    m = tuple(attempt_limit(chain.cutoff_s, rt * float(t)) for t in chain.taus)
    bad = [k + 1 for k in range(1, len(m)) if m[k] == 0]
    if bad:
        raise InfeasibleCutoffError(
            f"cutoff {chain.cutoff_s:g} s admits no attempt on link(s) {bad}"
        )
    return CutoffLimits(m)


def truncated_mean_attempts(p: float, m: int) -> float:
    """``sum_{N=1..m} N p q^(N-1)``; divide by ``1 - q^m`` for the conditional mean."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if m < 1:
        raise ValueError("m must be >= 1")
    q = 1.0 - p
    return (1.0 - (1.0 + m * p) * q**m) / p


def _pass_prob(p: float, m: int) -> float:
    # 1 - q^m without cancellation for small p
    return -math.expm1(m * math.log1p(-p)) if p < 1.0 else 1.0


def mean_duration_nocut(chain: ChainSpec, classical_delay: bool = True) -> float:
    rt = round_trip(classical_delay)
    return float(np.sum(rt * chain.taus / chain.probs))


def mean_duration_cut(
    chain: ChainSpec,
    classical_delay: bool = True,
    failure_charge: str = "cutoff",
) -> float:
    """Mean time to one end-to-end pair under the restart-on-cutoff rule.

    A failed window on link ``k`` costs ``tau_cut`` (``"cutoff"``) or the
    ``m_k`` attempt cycles actually spent (``"window"``).
    """
    if failure_charge not in FAILURE_CHARGES:
        raise ValueError(f"failure_charge must be one of {FAILURE_CHARGES}")
    lim = cutoff_limits(chain, classical_delay)
    rt = round_trip(classical_delay)
    taus, probs = chain.taus, chain.probs
    T = rt * taus[0] / probs[0]
    for k in range(1, len(taus)):
        p, m = float(probs[k]), lim.m[k]
        P = _pass_prob(p, m)
        fail = chain.cutoff_s if failure_charge == "cutoff" else rt * m * taus[k]
        T = T / P + (1.0 / P - 1.0) * fail + rt * truncated_mean_attempts(p, m) * taus[k] / P
    return float(T)


def _exp_scale(tau_coh_s: float) -> float:
    return 0.0 if math.isinf(tau_coh_s) else 1.0 / tau_coh_s


def exp_idle_nocut(chain: ChainSpec, mode: str, classical_delay: bool = True) -> float:
    return _exp_idle(chain, mode, classical_delay, None)


def exp_idle_cut(chain: ChainSpec, mode: str, classical_delay: bool = True) -> float:
    lim = cutoff_limits(chain, classical_delay)
    return _exp_idle(chain, mode, classical_delay, lim.m)


def _exp_idle(chain, mode, classical_delay, m):
    if mode not in ("fidelity", "skr"):
        raise ValueError(f"mode must be 'fidelity' or 'skr', got {mode!r}")
    rt = round_trip(classical_delay)
    s = _exp_scale(chain.tau_coh_s)
    if s == 0.0:
        return 1.0
    # end memories only count towards the fidelity idle
    val = math.exp(-(2 * rt - 1) * chain.tau_e2e * s) if mode == "fidelity" else 1.0
    for k in range(1, len(chain.taus)):
        mk = None if m is None else m[k]
        val *= _geom_exp(float(chain.probs[k]), float(chain.taus[k]) * s, mode, rt, mk)
    return float(val)


def _geom_exp(p: float, x: float, mode: str, rt: int, m: Optional[int]) -> float:
    """One link's factor: fidelity idle 2rt*N*tau, skr idle rt*(N + 1)*tau."""
    q = 1.0 - p
    head = p * math.exp(-2 * rt * x)
    r = q * math.exp(-(2 * rt if mode == "fidelity" else rt) * x)
    if m is None:
        return head / (1.0 - r)
    return head * (1.0 - r**m) / (1.0 - r) / _pass_prob(p, m)


def analytic_moments(
    chain: ChainSpec,
    classical_delay: bool = True,
    failure_charge: str = "cutoff",
) -> AnalyticResult:
    if chain.cutoff_s is None:
        return AnalyticResult(
            mean_duration_nocut(chain, classical_delay),
            exp_idle_nocut(chain, "fidelity", classical_delay),
            exp_idle_nocut(chain, "skr", classical_delay),
        )
    return AnalyticResult(
        mean_duration_cut(chain, classical_delay, failure_charge),
        exp_idle_cut(chain, "fidelity", classical_delay),
        exp_idle_cut(chain, "skr", classical_delay),
    )


def evaluate_sequential(
    chain: ChainSpec,
    mode: str = "skr",
    classical_delay: bool = True,
    failure_charge: str = "cutoff",
) -> PerformanceReport:
    """Full report for the sequential protocol; infeasible cutoffs give rate 0."""
    try:
        res = analytic_moments(chain, classical_delay, failure_charge)
    except InfeasibleCutoffError:
        return infeasible_report(chain, mode)
    dec = res.mean_decoherence_fidelity if mode == "fidelity" else res.mean_decoherence_skr
    return assemble_report(chain, res.rate_hz, dec, mode=mode)


def expected_rounds(chain: ChainSpec, classical_delay: bool = True) -> float:
    """Mean number of sender restarts per delivered pair (1 without a cutoff)."""
    if chain.cutoff_s is None:
        return 1.0
    lim = cutoff_limits(chain, classical_delay)
    out = 1.0
    for k in range(1, len(chain.taus)):
        out /= _pass_prob(float(chain.probs[k]), lim.m[k])
    return out
