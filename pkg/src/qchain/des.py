"""Discrete-event simulation of the sequential and parallel protocols.

Photons, acknowledgements, swaps, outcome messages and cutoff timers are
timestamped events in one priority queue.  Nothing here uses the closed-form
attempt-time rules of the Monte Carlo engine; durations and idle times are
read off memory load/release timestamps, which is what makes the two engines
useful as checks on each other.

Node ``0`` is the sender, nodes ``1..n`` are repeaters and node ``n + 1`` is
the receiver.  Link ``l`` (0-based) joins node ``l`` to node ``l + 1``; its
left end emits.  Each delivery has its own random stream, and inside a
delivery every photon loss is a separate Bernoulli draw.

Times inside an epoch (one sequential round or one parallel attempt) are
local, starting at zero; a restart opens a new epoch.  In the parallel
protocol event times are computed from attempt indices (``rt * j * tau``)
rather than by accumulation, so swap times match the closed forms bit for bit.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ._accel import njit
from .analytic import CUTOFF_GUARD, InfeasibleCutoffError, cutoff_limits, round_trip
from .kernels import STATUS_BUDGET, STATUS_OK
from .mc import PILOT_SAMPLES, McConfig, attempt_budget, parallel_cutoff_feasible
from .noise import MODES, ChainSpec, PerformanceReport, infeasible_report
from .rng import DES_SALT, seed_key, stream_key, uniform

EMIT, PHOTON, ACK, SWAP, OUTCOME, CUTOFF, RESTART, DONE = range(8)
EVENT_NAMES = ("EmitPair", "PhotonArrive", "AckArrive", "SwapDone", "OutcomeArrive",
               "CutoffExpire", "Restart", "Delivered")

ABORT_POLICIES = ("complete", "instant", "classical")
_ABORT_CODE = {"complete": 0, "instant": 1, "classical": 2}
# the Monte Carlo charge that each abort policy reproduces
MC_POLICY = {"complete": "full", "instant": "instant", "classical": "classical"}

_SEQUENTIAL = 0
_PARALLEL = 1
_LATE = 1  # cutoff timers lose same-time ties to every other event


@njit
def _des_loop(proto, taus, probs, cum, rt, has_cut, tc_eff, tau_cut, policy, key, start,
              out_T, out_if, out_is, out_epochs, out_counts, out_swaps, out_tl, out_tr,
              out_ta, out_tb, budget, trace_on):
    n_links = taus.shape[0]
    n_rep = n_links - 1
    n_nodes = n_links + 1
    cf = rt - 1
    tau_e2e = cum[n_links - 1]

    left_load = np.zeros(n_nodes)
    right_load = np.zeros(n_nodes)
    left_tag = np.full(n_nodes, -1, np.int64)
    right_tag = np.full(n_nodes, -1, np.int64)
    right_ok = np.zeros(n_nodes, np.bool_)
    swapped = np.zeros(n_nodes, np.bool_)
    t_left = np.zeros(n_nodes)
    t_right = np.zeros(n_nodes)
    swap_at = np.zeros(n_nodes)
    counts = np.zeros(n_links, np.int64)

    heap = [(0.0, 0, 0, 0, 0, 0, 0, 0)]
    heap.pop()
    trace = [(0.0, 0, 0, 0, 0)]
    trace.pop()

    total_epochs = 0
    for i in range(out_T.shape[0]):
        sk = stream_key(key, start + i)
        ctr = 0
        offset = 0.0
        epoch = 0
        seq = 0
        fresh = True
        pending = 0
        violated = False
        while True:
            if fresh:
                # open an epoch: all memories empty, nothing in flight
                fresh = False
                total_epochs += 1
                if total_epochs > budget:
                    return STATUS_BUDGET, trace
                del heap[:]
                for v in range(n_nodes):
                    left_tag[v] = -1
                    right_tag[v] = -1
                    right_ok[v] = False
                    swapped[v] = False
                    t_left[v] = 0.0
                    t_right[v] = 0.0
                violated = False
                pending = n_rep + 1
                if proto == _SEQUENTIAL:
                    pending = n_rep + 2
                    heapq.heappush(heap, (0.0, 0, seq, EMIT, 0, 0, 1, 0))
                    seq += 1
                else:
                    for l in range(n_links):
                        heapq.heappush(heap, (0.0, 0, seq, EMIT, l, l, 1, 0))
                        seq += 1

            t, prio, _, kind, node, link, tag, aux = heapq.heappop(heap)

            if kind == CUTOFF:
                live = left_tag[node] == tag if aux == 0 else right_tag[node] == tag
                if not live:
                    continue
            if trace_on:
                trace.append((offset + t, kind, node, link, tag))

            if kind == EMIT:
                right_load[node] = t
                right_tag[node] = tag
                ok = 1 if uniform(sk, ctr) < probs[link] else 0
                ctr += 1
                if proto == _SEQUENTIAL:
                    t_arr = t + taus[link]
                else:
                    t_arr = (rt * tag - cf) * taus[link]
                    if has_cut and node >= 1:
                        heapq.heappush(heap, (t + tc_eff, _LATE, seq, CUTOFF, node, link, tag, 1))
                        seq += 1
                heapq.heappush(heap, (t_arr, 0, seq, PHOTON, link + 1, link, tag, ok))
                seq += 1

            elif kind == PHOTON:
                if proto == _SEQUENTIAL:
                    t_ack = t + cf * taus[link]
                else:
                    t_ack = (rt * tag) * taus[link]
                heapq.heappush(heap, (t_ack, 0, seq, ACK, link, link, tag, aux))
                seq += 1
                if aux == 1:
                    left_load[node] = t
                    left_tag[node] = tag
                    counts[link] = tag
                    if node <= n_rep:
                        if has_cut:
                            heapq.heappush(heap, (t + tc_eff, _LATE, seq, CUTOFF, node, link, tag, 0))
                            seq += 1
                        if proto == _SEQUENTIAL:
                            heapq.heappush(heap, (t, 0, seq, EMIT, node, node, 1, 0))
                            seq += 1
                        elif right_ok[node]:
                            heapq.heappush(heap, (t, 0, seq, SWAP, node, node, tag, 0))
                            seq += 1
                    elif proto == _SEQUENTIAL:
                        # receiver's notice that the chain reached it
                        heapq.heappush(heap, (t + cf * tau_e2e, 0, seq, OUTCOME, 0, link, tag, 0))
                        seq += 1

            elif kind == ACK:
                if aux == 0:
                    right_tag[node] = -1
                    if proto == _SEQUENTIAL:
                        t_next = t
                    else:
                        t_next = (rt * tag) * taus[link]
                    heapq.heappush(heap, (t_next, 0, seq, EMIT, node, link, tag + 1, 0))
                    seq += 1
                else:
                    right_ok[node] = True
                    if node == 0:
                        pending -= 1
                    elif left_tag[node] >= 0:
                        heapq.heappush(heap, (t, 0, seq, SWAP, node, link, tag, 0))
                        seq += 1

            elif kind == SWAP:
                swap_at[node] = t
                t_left[node] = t - left_load[node]
                t_right[node] = t - right_load[node]
                left_tag[node] = -1
                right_tag[node] = -1
                swapped[node] = True
                heapq.heappush(heap, (t + cf * cum[node - 1], 0, seq, OUTCOME, 0, node, tag, 0))
                seq += 1

            elif kind == OUTCOME:
                pending -= 1

            elif kind == CUTOFF:
                if proto == _SEQUENTIAL:
                    # reset notice travels back to the sender, which starts over
                    t_re = max(t, left_load[node] + tau_cut + cf * cum[node - 1])
                    del heap[:]
                    heapq.heappush(heap, (t_re, 0, seq, RESTART, 0, 0, epoch, 0))
                    seq += 1
                elif policy == 0:
                    violated = True
                else:
                    d = 0.0
                    if policy == 2:
                        d = cf * max(cum[node - 1], tau_e2e - cum[node - 1])
                        # simultaneous expiries: the closest notice wins
                        while len(heap) > 0 and heap[0][0] == t and heap[0][3] == CUTOFF:
                            e = heapq.heappop(heap)
                            v = e[4]
                            if (e[7] == 0 and left_tag[v] == e[6]) or (e[7] == 1 and right_tag[v] == e[6]):
                                d = min(d, cf * max(cum[v - 1], tau_e2e - cum[v - 1]))
                    del heap[:]
                    heapq.heappush(heap, (t + d, 0, seq, RESTART, 0, 0, epoch, 0))
                    seq += 1

            elif kind == RESTART:
                offset += t
                epoch += 1
                fresh = True
                continue

            if pending == 0:
                if violated:
                    # the attempt ran to completion but a memory expired
                    if trace_on:
                        trace.append((offset + t, RESTART, 0, 0, epoch))
                    offset += t
                    epoch += 1
                    fresh = True
                    continue
                if trace_on:
                    trace.append((offset + t, DONE, 0, 0, epoch))
                i_rep = 0.0
                for v in range(1, n_rep + 1):
                    i_rep += t_left[v] + t_right[v]
                    out_swaps[i, v - 1] = swap_at[v]
                    out_tl[i, v - 1] = t_left[v]
                    out_tr[i, v - 1] = t_right[v]
                ta = t - right_load[0]
                tb = t - left_load[n_links]
                out_T[i] = offset + t
                out_is[i] = i_rep
                out_if[i] = i_rep + ta + tb
                out_ta[i] = ta
                out_tb[i] = tb
                out_epochs[i] = epoch + 1
                for l in range(n_links):
                    out_counts[i, l] = counts[l]
                break
    return STATUS_OK, trace


@dataclass
class DesResult:
    duration: np.ndarray
    idle_fidelity: np.ndarray
    idle_skr: np.ndarray
    epochs: np.ndarray
    counts: np.ndarray  # successful attempt index per link
    swap_times: np.ndarray  # epoch-local, per repeater
    t_left: np.ndarray
    t_right: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    status: int = STATUS_OK
    trace: Optional[List[Tuple]] = None

    def __len__(self):
        return len(self.duration)


def simulate(
    chain: ChainSpec,
    protocol: str,
    n_successes: int,
    *,
    seed: int = 0,
    classical_delay: bool = True,
    abort_policy: str = "complete",
    start: int = 0,
    trace: bool = False,
    max_epochs: Optional[int] = None,
) -> Optional[DesResult]:
    """Run the event loop until ``n_successes`` deliveries; ``None`` if the cutoff is infeasible."""
    if protocol not in ("sequential", "parallel"):
        raise ValueError(f"protocol must be 'sequential' or 'parallel', got {protocol!r}")
    if abort_policy not in ABORT_POLICIES:
        raise ValueError(f"abort_policy must be one of {ABORT_POLICIES}")
    if n_successes < 1:
        raise ValueError("n_successes must be >= 1")
    has_cut = chain.cutoff_s is not None
    if has_cut:
        if protocol == "sequential":
            try:
                cutoff_limits(chain, classical_delay)
            except InfeasibleCutoffError:
                return None
        elif not parallel_cutoff_feasible(chain, classical_delay):
            return None
    taus = np.ascontiguousarray(chain.taus, dtype=np.float64)
    probs = np.ascontiguousarray(chain.probs, dtype=np.float64)
    cum = np.cumsum(taus)
    n = n_successes
    n_links = len(taus)
    n_rep = max(n_links - 1, 1)
    out = dict(
        out_T=np.zeros(n), out_if=np.zeros(n), out_is=np.zeros(n),
        out_epochs=np.zeros(n, np.int64), out_counts=np.zeros((n, n_links), np.int64),
        out_swaps=np.zeros((n, n_rep)), out_tl=np.zeros((n, n_rep)), out_tr=np.zeros((n, n_rep)),
        out_ta=np.zeros(n), out_tb=np.zeros(n),
    )
    budget = attempt_budget(n, 2000) if max_epochs is None else int(max_epochs)
    rt = round_trip(classical_delay)
    tau_cut = chain.cutoff_s if has_cut else math.inf
    tc_eff = tau_cut * (1.0 + CUTOFF_GUARD)
    status, tr = _des_loop(
        _SEQUENTIAL if protocol == "sequential" else _PARALLEL,
        taus, probs, cum, rt, has_cut, tc_eff, tau_cut, _ABORT_CODE[abort_policy],
        seed_key(seed, DES_SALT), start,
        out["out_T"], out["out_if"], out["out_is"], out["out_epochs"], out["out_counts"],
        out["out_swaps"], out["out_tl"], out["out_tr"], out["out_ta"], out["out_tb"],
        budget, trace,
    )
    k = n_links - 1
    res = DesResult(
        out["out_T"], out["out_if"], out["out_is"], out["out_epochs"], out["out_counts"],
        out["out_swaps"][:, :k], out["out_tl"][:, :k], out["out_tr"][:, :k],
        out["out_ta"], out["out_tb"], status,
        [tuple(e) for e in tr] if trace else None,
    )
    return res


def format_trace(trace) -> str:
    """Newline-delimited ``time,kind,node,link,tag`` records."""
    lines = [f"{t!r},{EVENT_NAMES[k]},{node},{link},{tag}" for t, k, node, link, tag in trace]
    return "\n".join(lines) + ("\n" if lines else "")


def report_from_des(chain: ChainSpec, res: Optional[DesResult], mode: str) -> PerformanceReport:
    if res is None:
        return infeasible_report(chain, mode)
    if res.status != STATUS_OK:
        return infeasible_report(chain, mode, status="budget_exceeded")
    # same estimator as the Monte Carlo engine
    from .kernels import SampleBatch
    from .mc import report_from_samples

    batch = SampleBatch(res.duration, res.idle_fidelity, res.idle_skr, res.epochs, res.counts)
    return report_from_samples(chain, batch, mode)


def simulate_for(chain: ChainSpec, protocol: str, config: McConfig,
                 n_successes: Optional[int] = None,
                 abort_policy: Optional[str] = None) -> Optional[DesResult]:
    """``simulate`` driven by a Monte Carlo config, with the same attempt budget rules."""
    n = config.n_samples if n_successes is None else n_successes
    policy = abort_policy or _policy_for(config.policy)
    per = config.max_attempts_per_sample
    kw = dict(seed=config.seed, classical_delay=config.classical_delay, abort_policy=policy)
    if chain.cutoff_s is not None:
        n_pilot = min(n, PILOT_SAMPLES)
        pilot = simulate(chain, protocol, n_pilot, max_epochs=per * n_pilot, **kw)
        if pilot is None:
            return None
        if pilot.status != STATUS_OK:
            return pilot
    return simulate(chain, protocol, n, max_epochs=attempt_budget(n, per), **kw)


def run_des(
    chain: ChainSpec,
    protocol: str,
    config: McConfig,
    n_successes: Optional[int] = None,
    abort_policy: Optional[str] = None,
) -> PerformanceReport:
    """Event-driven report in ``config.mode``; assembled exactly like the Monte Carlo one."""
    res = simulate_for(chain, protocol, config, n_successes, abort_policy)
    return report_from_des(chain, res, config.mode)


def run_des_modes(chain: ChainSpec, protocol: str, config: McConfig,
                  abort_policy: Optional[str] = None) -> dict:
    res = simulate_for(chain, protocol, config, abort_policy=abort_policy)
    return {mode: report_from_des(chain, res, mode) for mode in MODES}


def _policy_for(mc_policy: str) -> str:
    for k, v in MC_POLICY.items():
        if v == mc_policy:
            return k
    raise ValueError(f"unknown policy {mc_policy!r}")
