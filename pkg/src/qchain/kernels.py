"""Sampling kernels behind the Monte Carlo engine.

Each kernel produces ``n`` end-to-end deliveries.  Sample ``i`` uses the
random stream ``stream_key(key, start + i)`` and round (or attempt) ``r``
reads link ``k``'s uniform from counter ``r * n_links + k``.  Because the
counter layout is fixed, the compiled loops and the vectorised numpy versions
draw identical attempt counts and agree to the last bit.

Times are in units where attempt cycles are ``rt * tau`` (``rt = 2`` with
classical signalling, ``1`` without) and ``cf = rt - 1`` scales every purely
classical message.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._accel import USE_NUMBA, njit
from .rng import geometric, geometric_np, stream_key, stream_keys_np, uniform, uniform_np

POLICIES = ("full", "instant", "classical")
_POLICY_CODE = {"full": 0, "instant": 1, "classical": 2}

STATUS_OK = 0
STATUS_BUDGET = 1


@dataclass
class SampleBatch:
    duration: np.ndarray  # elapsed time per delivery, failed rounds included
    idle_fidelity: np.ndarray
    idle_skr: np.ndarray
    rounds: np.ndarray  # rounds (sequential) or full attempts (parallel) used
    counts: Optional[np.ndarray]  # attempt counts of the successful round
    status: int = STATUS_OK

    def __len__(self):
        return len(self.duration)


# ----------------------------------------------------------------- sequential


@njit
def _seq_loop(taus, probs, log_q, m, rt, has_cut, fail_window, tau_cut, key, start,
              out_T, out_if, out_is, out_rounds, out_counts, budget):
    n_links = taus.shape[0]
    tau_e2e = 0.0
    for k in range(n_links):
        tau_e2e += taus[k]
    ns = np.empty(n_links, np.int64)
    record = out_counts.shape[0] > 0
    total = 0
    for i in range(out_T.shape[0]):
        sk = stream_key(key, start + i)
        elapsed = 0.0
        r = 0
        while True:
            failed = -1
            prefix = 0.0
            for k in range(n_links):
                u = uniform(sk, r * n_links + k)
                nk = geometric(probs[k], log_q[k], u)
                ns[k] = nk
                if has_cut and k > 0 and nk > m[k]:
                    failed = k
                    break
                prefix += nk * taus[k]
            total += 1
            if total > budget:
                return STATUS_BUDGET
            if failed < 0:
                break
            if fail_window:
                elapsed += rt * prefix + rt * m[failed] * taus[failed]
            else:
                elapsed += rt * prefix + tau_cut
            r += 1
        s_rep = 0.0
        s_n = 0.0
        for k in range(1, n_links):
            s_rep += ns[k] * taus[k]
            s_n += (ns[k] + 1) * taus[k]
        out_T[i] = elapsed + rt * prefix
        out_if[i] = (2 * rt - 1) * tau_e2e + 2 * rt * s_rep
        out_is[i] = rt * s_n
        out_rounds[i] = r + 1
        if record:
            for k in range(n_links):
                out_counts[i, k] = ns[k]
    return STATUS_OK


def _seq_numpy(taus, probs, m, rt, has_cut, fail_window, tau_cut, key, start, n,
               record, budget):
    n_links = len(taus)
    tau_e2e = 0.0
    for t in taus:
        tau_e2e += t
    out_T = np.zeros(n)
    out_if = np.zeros(n)
    out_is = np.zeros(n)
    out_rounds = np.zeros(n, np.int64)
    out_counts = np.zeros((n, n_links), np.int64) if record else None
    keys = stream_keys_np(key, np.arange(start, start + n, dtype=np.uint64))
    idx = np.arange(n)
    elapsed = np.zeros(n)
    r = 0
    total = 0
    while idx.size:
        base = np.uint64(r * n_links)
        ns = np.empty((idx.size, n_links), np.int64)
        for k in range(n_links):
            u = uniform_np(keys[idx], np.full(idx.size, base + np.uint64(k), np.uint64))
            ns[:, k] = geometric_np(float(probs[k]), u)
        if has_cut and n_links > 1:
            over = ns[:, 1:] > m[1:]
            bad = over.any(axis=1)
            first = np.where(bad, over.argmax(axis=1) + 1, n_links)
        else:
            bad = np.zeros(idx.size, bool)
            first = np.full(idx.size, n_links)
        # prefix sums of N_k tau_k in link order, matching the compiled loop
        prefix = np.zeros(idx.size)
        for k in range(n_links):
            prefix = np.where(k < first, prefix + ns[:, k] * taus[k], prefix)
        total += idx.size
        if total > budget:
            # the compiled loop aborts too iff the full run would exceed the budget
            return None
        ok = ~bad
        done = idx[ok]
        if done.size:
            nsd = ns[ok]
            s_rep = np.zeros(done.size)
            s_n = np.zeros(done.size)
            for k in range(1, n_links):
                s_rep = s_rep + nsd[:, k] * taus[k]
                s_n = s_n + (nsd[:, k] + 1) * taus[k]
            out_T[done] = elapsed[done] + rt * prefix[ok]
            out_if[done] = (2 * rt - 1) * tau_e2e + 2 * rt * s_rep
            out_is[done] = rt * s_n
            out_rounds[done] = r + 1
            if record:
                out_counts[done] = nsd
        if bad.any():
            fi = first[bad]
            if fail_window:
                charge = rt * prefix[bad] + rt * m[fi] * taus[fi]
            else:
                charge = rt * prefix[bad] + tau_cut
            elapsed[idx[bad]] += charge
        idx = idx[bad]
        r += 1
    return SampleBatch(out_T, out_if, out_is, out_rounds, out_counts)


def sample_sequential(
    taus: np.ndarray,
    probs: np.ndarray,
    n: int,
    key: np.uint64,
    *,
    rt: int = 2,
    m: Optional[np.ndarray] = None,
    tau_cut: float = math.inf,
    fail_window: bool = False,
    start: int = 0,
    record_counts: bool = False,
    budget: Optional[int] = None,
    backend: Optional[str] = None,
) -> SampleBatch:
    """Sequential deliveries; ``m`` (attempt limits per link) enables the cutoff."""
    taus = np.ascontiguousarray(taus, dtype=np.float64)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    n_links = len(taus)
    has_cut = m is not None
    m_arr = np.zeros(n_links, np.int64) if m is None else np.asarray(m, dtype=np.int64)
    budget = _default_budget(n) if budget is None else int(budget)
    if _use_compiled(backend):
        log_q = _log_q(probs)
        out_T = np.zeros(n)
        out_if = np.zeros(n)
        out_is = np.zeros(n)
        out_rounds = np.zeros(n, np.int64)
        out_counts = np.zeros((n if record_counts else 0, n_links), np.int64)
        status = _seq_loop(taus, probs, log_q, m_arr, rt, has_cut, fail_window,
                           float(tau_cut), np.uint64(key), start, out_T, out_if, out_is,
                           out_rounds, out_counts, budget)
        if status != STATUS_OK:
            return _aborted(n_links)
        return SampleBatch(out_T, out_if, out_is, out_rounds,
                           out_counts if record_counts else None)
    res = _seq_numpy(taus, probs, m_arr, rt, has_cut, fail_window, float(tau_cut),
                     np.uint64(key), start, n, record_counts, budget)
    return _aborted(n_links) if res is None else res


# ------------------------------------------------------------------- parallel


@njit
def _par_loop(taus, probs, log_q, cum, rt, has_cut, tc_eff, policy, key, start,
              out_T, out_if, out_is, out_rounds, out_counts, budget):
    n_links = taus.shape[0]
    cf = rt - 1
    tau_e2e = cum[n_links - 1]
    ns = np.empty(n_links, np.int64)
    record = out_counts.shape[0] > 0
    total = 0
    for i in range(out_T.shape[0]):
        sk = stream_key(key, start + i)
        elapsed = 0.0
        a = 0
        while True:
            for k in range(n_links):
                ns[k] = geometric(probs[k], log_q[k], uniform(sk, a * n_links + k))
            T = rt * ns[0] * taus[0]
            i_rep = 0.0
            tv = math.inf
            dv = math.inf
            for k in range(1, n_links):
                arr = (rt * ns[k - 1] - cf) * taus[k - 1]
                ack = rt * ns[k] * taus[k]
                emit = rt * (ns[k] - 1) * taus[k]
                tk = max(arr, ack)
                t_l = tk - arr
                t_r = tk - emit
                i_rep += t_l + t_r
                T = max(T, tk + cf * cum[k - 1])
                if has_cut:
                    d = cf * max(cum[k - 1], tau_e2e - cum[k - 1])
                    if t_l > tc_eff:
                        c = arr + tc_eff
                        if c < tv or (c == tv and d < dv):
                            tv = c
                            dv = d
                    if t_r > tc_eff:
                        c = emit + tc_eff
                        if c < tv or (c == tv and d < dv):
                            tv = c
                            dv = d
            total += 1
            if total > budget:
                return STATUS_BUDGET
            if tv == math.inf:
                break
            if policy == 0:
                elapsed += T
            elif policy == 1:
                elapsed += tv
            else:
                elapsed += tv + dv
            a += 1
        t_a = T - rt * (ns[0] - 1) * taus[0]
        t_b = T - (rt * ns[n_links - 1] - cf) * taus[n_links - 1]
        out_T[i] = elapsed + T
        out_if[i] = i_rep + t_a + t_b
        out_is[i] = i_rep
        out_rounds[i] = a + 1
        if record:
            for k in range(n_links):
                out_counts[i, k] = ns[k]
    return STATUS_OK


def parallel_times(ns: np.ndarray, taus: np.ndarray, rt: int = 2):
    """Swap times and memory idle times for attempt counts ``ns`` (shape ``(s, n+1)``).

    Returns a dict of arrays: ``swap`` and ``t_left``/``t_right`` with shape
    ``(s, n)``, ``arrival``/``emit`` (load times of the left and right memory),
    ``duration``, ``t_a`` and ``t_b``.
    """
    ns = np.atleast_2d(np.asarray(ns, dtype=np.int64))
    taus = np.asarray(taus, dtype=np.float64)
    cf = rt - 1
    n_links = taus.shape[0]
    cum = np.cumsum(taus)
    T = rt * ns[:, 0] * taus[0]
    arr = (rt * ns[:, :-1] - cf) * taus[:-1]
    ack = rt * ns[:, 1:] * taus[1:]
    emit = rt * (ns[:, 1:] - 1) * taus[1:]
    swap = np.maximum(arr, ack)
    for k in range(1, n_links):
        T = np.maximum(T, swap[:, k - 1] + cf * cum[k - 1])
    return {
        "swap": swap,
        "arrival": arr,
        "emit": emit,
        "t_left": swap - arr,
        "t_right": swap - emit,
        "duration": T,
        "t_a": T - rt * (ns[:, 0] - 1) * taus[0],
        "t_b": T - (rt * ns[:, -1] - cf) * taus[-1],
    }


def _par_numpy(taus, probs, cum, rt, has_cut, tc_eff, policy, key, start, n, record, budget):
    n_links = len(taus)
    cf = rt - 1
    tau_e2e = cum[-1]
    out_T = np.zeros(n)
    out_if = np.zeros(n)
    out_is = np.zeros(n)
    out_rounds = np.zeros(n, np.int64)
    out_counts = np.zeros((n, n_links), np.int64) if record else None
    keys = stream_keys_np(key, np.arange(start, start + n, dtype=np.uint64))
    idx = np.arange(n)
    elapsed = np.zeros(n)
    a = 0
    total = 0
    while idx.size:
        base = np.uint64(a * n_links)
        ns = np.empty((idx.size, n_links), np.int64)
        for k in range(n_links):
            u = uniform_np(keys[idx], np.full(idx.size, base + np.uint64(k), np.uint64))
            ns[:, k] = geometric_np(float(probs[k]), u)
        t = parallel_times(ns, taus, rt)
        i_rep = np.zeros(idx.size)
        tv = np.full(idx.size, math.inf)
        dv = np.full(idx.size, math.inf)
        for k in range(1, n_links):
            i_rep = i_rep + (t["t_left"][:, k - 1] + t["t_right"][:, k - 1])
            if has_cut:
                d = cf * max(cum[k - 1], tau_e2e - cum[k - 1])
                for viol, load in ((t["t_left"][:, k - 1] > tc_eff, t["arrival"][:, k - 1]),
                                   (t["t_right"][:, k - 1] > tc_eff, t["emit"][:, k - 1])):
                    c = load + tc_eff
                    better = viol & ((c < tv) | ((c == tv) & (d < dv)))
                    tv = np.where(better, c, tv)
                    dv = np.where(better, d, dv)
        total += idx.size
        if total > budget:
            return None
        T = t["duration"]
        ok = tv == math.inf
        done = idx[ok]
        if done.size:
            out_T[done] = elapsed[done] + T[ok]
            out_if[done] = i_rep[ok] + t["t_a"][ok] + t["t_b"][ok]
            out_is[done] = i_rep[ok]
            out_rounds[done] = a + 1
            if record:
                out_counts[done] = ns[ok]
        bad = ~ok
        if bad.any():
            if policy == 0:
                charge = T[bad]
            elif policy == 1:
                charge = tv[bad]
            else:
                charge = tv[bad] + dv[bad]
            elapsed[idx[bad]] += charge
        idx = idx[bad]
        a += 1
    return SampleBatch(out_T, out_if, out_is, out_rounds, out_counts)


def sample_parallel(
    taus: np.ndarray,
    probs: np.ndarray,
    n: int,
    key: np.uint64,
    *,
    rt: int = 2,
    tau_cut: Optional[float] = None,
    policy: str = "full",
    start: int = 0,
    record_counts: bool = False,
    budget: Optional[int] = None,
    backend: Optional[str] = None,
) -> SampleBatch:
    """Parallel deliveries; an attempt fails when any repeater memory idles past ``tau_cut``.

    ``policy`` sets the time charged to a failed attempt: ``"full"`` waits for
    the whole attempt, ``"instant"`` stops at the first expiry and
    ``"classical"`` adds the time for the abort notice to reach every node.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    from .analytic import CUTOFF_GUARD

    taus = np.ascontiguousarray(taus, dtype=np.float64)
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    n_links = len(taus)
    cum = np.cumsum(taus)
    has_cut = tau_cut is not None
    tc_eff = tau_cut * (1.0 + CUTOFF_GUARD) if has_cut else math.inf
    code = _POLICY_CODE[policy]
    budget = _default_budget(n) if budget is None else int(budget)
    if _use_compiled(backend):
        log_q = _log_q(probs)
        out_T = np.zeros(n)
        out_if = np.zeros(n)
        out_is = np.zeros(n)
        out_rounds = np.zeros(n, np.int64)
        out_counts = np.zeros((n if record_counts else 0, n_links), np.int64)
        status = _par_loop(taus, probs, log_q, cum, rt, has_cut, tc_eff, code,
                           np.uint64(key), start, out_T, out_if, out_is, out_rounds,
                           out_counts, budget)
        if status != STATUS_OK:
            return _aborted(n_links)
        return SampleBatch(out_T, out_if, out_is, out_rounds,
                           out_counts if record_counts else None)
    res = _par_numpy(taus, probs, cum, rt, has_cut, tc_eff, code, np.uint64(key), start, n,
                     record_counts, budget)
    return _aborted(n_links) if res is None else res


# -------------------------------------------------------------------- helpers


def _log_q(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log1p(-probs)


def _default_budget(n: int) -> int:
    # attempts across the whole batch before giving up on a hopeless cutoff
    return 2000 * n + 1_000_000


def _use_compiled(backend: Optional[str]) -> bool:
    if backend is None:
        return USE_NUMBA
    if backend == "numba":
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"backend must be 'numba' or 'numpy', got {backend!r}")


def _aborted(n_links: int) -> SampleBatch:
    empty = np.zeros(0)
    return SampleBatch(empty, empty, empty, np.zeros(0, np.int64), None, STATUS_BUDGET)
