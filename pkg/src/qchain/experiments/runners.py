"""The seven sweep experiments.  Each is a pure function of its config."""

from __future__ import annotations

import math
import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .. import __version__
from ..noise import ChainSpec, PerformanceReport
from ..rng import derive_seed
from ..topology import chain_from_pair, load_graphml, load_surfnet, select_user_pairs
from .config import ExperimentConfig
from .emit import SweepResult, Table
from .evaluate import (
    NO_CUTOFF,
    Evaluator,
    argmax_cutoff,
    as_cutoff,
    cutoff_grid,
    map_cells,
    min_positive_tau_coh,
    scan_cutoffs,
    search_kwargs,
)

METRIC_COLUMNS = (
    "ebit_rate_hz",
    "stderr_rate",
    "skr_hz",
    "stderr_skr",
    "fidelity_e2e",
    "stderr_fidelity",
    "qber_z",
    "qber_x",
    "secret_fraction",
    "status",
)


def metrics(reps: Dict[str, PerformanceReport]) -> tuple:
    """SKR-side figures from the skr-mode report, fidelity from the fidelity-mode one."""
    s, f = reps["skr"], reps["fidelity"]
    return (s.ebit_rate_hz, s.stderr_rate, s.skr_hz, s.stderr_skr, f.fidelity_e2e,
            f.stderr_fidelity, s.qber_z, s.qber_x, s.secret_fraction, s.status)


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _chain(cfg: ExperimentConfig, lengths: Sequence[float], tau_coh: float = math.inf,
           cutoff: Optional[float] = None, **override) -> ChainSpec:
    kw = cfg.physics.chain_kwargs()
    kw.update(override)
    return ChainSpec.from_lengths(list(lengths), tau_coh_s=tau_coh, cutoff_s=cutoff, **kw)


def _uniform_lengths(total_km: float, n_repeaters: int) -> list:
    return [total_km / (n_repeaters + 1)] * (n_repeaters + 1)


def _finish(cfg: ExperimentConfig, table: Table, started: float, extra=None, feasible=None,
            **info) -> SweepResult:
    if feasible is None:
        feasible = sum(1 for s in table.column("status") if s == "ok")
    meta = {
        "config": cfg.as_dict(),
        "code_version": __version__,
        "wall_time_s": time.perf_counter() - started,
        "n_rows": len(table.rows),
        "feasible_rows": feasible,
        **info,
    }
    return SweepResult(cfg.experiment, table, extra or {}, meta)


def one_repeater_sweep(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    total = g["total_km"]
    cut = g["cutoff_s"]
    tau = g["tau_coh_s"]
    direct = ev.report(_chain(cfg, [total], tau), "sequential", derive_seed(cfg.seed, 0xD1))

    def cell(i, x):
        seed = derive_seed(cfg.seed, i)
        ch = _chain(cfg, [x, total - x], tau, cut)
        return [(p, ev.report(ch, p, seed)) for p in cfg.protocols]

    table = Table(("position_km", "protocol") + METRIC_COLUMNS)
    for x, res in zip(g["positions_km"], map_cells(cell, g["positions_km"])):
        for p, reps in res:
            table.add(x, p, *metrics(reps))
        table.add(x, "direct", *metrics(direct))
    return _finish(cfg, table, t0)


def cutoff_sweep(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    cutoffs = sorted(g["cutoffs_s"]) + [NO_CUTOFF]
    cells = [(L, p) for L in g["distances_km"] for p in cfg.protocols]

    def cell(i, c):
        L, p = c
        ch = _chain(cfg, _uniform_lengths(L, g["n_repeaters"]), g["tau_coh_s"])
        return scan_cutoffs(ev, ch, p, cutoffs, [g["tau_coh_s"]], derive_seed(cfg.seed, i))

    table = Table(("L_km", "protocol", "cutoff_s", "reference") + METRIC_COLUMNS)
    for (L, p), scan in zip(cells, map_cells(cell, cells)):
        for k, c in enumerate(cutoffs):
            ref = math.isinf(c)
            table.add(L, p, None if ref else c, ref, *metrics(scan.at(k, 0)))
    return _finish(cfg, table, t0)


def _regime(best_skr: float, nocut_skr: float) -> str:
    if not best_skr > 0:
        return "infeasible"
    return "feasible" if nocut_skr > 0 else "cutoff_only"


def opt_skr_heatmap(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    taus = sorted(_as_list(g["tau_coh_s"]))
    cells = [(p, L) for p in cfg.protocols for L in g["distances_km"]]
    skw = search_kwargs(g, cfg.classical_delay)
    skw["include_no_cutoff"] = True  # the regime label needs the no-cutoff value either way

    def cell(i, c):
        p, L = c
        ch = _chain(cfg, _uniform_lengths(L, g["n_repeaters"]))
        cands = cutoff_grid(ch, **skw)
        return scan_cutoffs(ev, ch, p, cands, taus, derive_seed(cfg.seed, i))

    table = Table(("L_km", "tau_coh_s", "best_cutoff_s", "skr_hz", "regime", "protocol",
                   "nocut_skr_hz", "ebit_rate_hz", "fidelity_e2e", "n_candidates", "status"))
    n_feasible = 0
    for (p, L), scan in zip(cells, map_cells(cell, cells)):
        allowed = list(scan.cutoffs) if g["include_no_cutoff"] else list(scan.cutoffs[:-1])
        for j, t in enumerate(taus):
            skrs = scan.skr(j)
            b = argmax_cutoff(allowed, skrs[: len(allowed)])
            best, nocut = float(skrs[b]), float(skrs[-1])
            regime = _regime(best, nocut)
            reps = scan.at(b, j)
            n_feasible += regime != "infeasible"
            table.add(L, t, allowed[b] if best > 0 else None, best, regime, p, nocut,
                      reps["skr"].ebit_rate_hz, reps["fidelity"].fidelity_e2e, len(allowed),
                      "ok" if best > 0 else "infeasible")
    return _finish(cfg, table, t0, feasible=n_feasible)


def feasible_region(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    lo, hi = g["tau_coh_bounds_s"]
    cells = [(tuple(tr), p, L) for tr in g["triples"] for p in cfg.protocols for L in g["distances_km"]]
    skw = search_kwargs(g, cfg.classical_delay)

    def cell(i, c):
        (F, mu, p_link), p, L = c
        ch = _chain(cfg, _uniform_lengths(L, g["n_repeaters"]), fidelity_F=F, mu_swap=mu,
                    mu_link=mu, p_link=p_link)
        # F and mu do not change the samples, so triples share one stream per (protocol, L)
        seed = derive_seed(cfg.seed, cfg.protocols.index(p), g["distances_km"].index(L))

        def boundary(cutoff: float) -> float:
            chc = ch.with_cutoff(as_cutoff(cutoff))
            report = ev.sampler(chc, p, seed)
            return min_positive_tau_coh(lambda t: report(chc.with_tau_coh(t), "skr").skr_hz,
                                        lo, hi, g["rel_tol"])

        out = {}
        if "none" in g["cutoff_modes"]:
            out["none"] = (boundary(NO_CUTOFF), NO_CUTOFF)
        if "optimized" in g["cutoff_modes"]:
            cands = cutoff_grid(ch, **skw)
            bounds = [boundary(c) for c in cands]
            # smallest boundary wins; ties go to the smallest cutoff
            k = min(range(len(cands)), key=lambda i: (bounds[i], cands[i]))
            out["optimized"] = (bounds[k], cands[k])
        return out

    table = Table(("F", "mu", "p_link", "cutoff_mode", "protocol", "L_km",
                   "min_tau_coh_s", "best_cutoff_s", "status"))
    results = map_cells(cell, cells)
    for mode in g["cutoff_modes"]:
        for (tr, p, L), out in zip(cells, results):
            b, c = out[mode]
            ok = math.isfinite(b)
            table.add(tr[0], tr[1], tr[2], mode, p, L, b if ok else None,
                      c if ok else None, "ok" if ok else "infeasible")
    return _finish(cfg, table, t0)


def cc_delay_compare(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    on = Evaluator.from_config(cfg, classical_delay=True)
    off = Evaluator.from_config(cfg, classical_delay=False)
    cells = [(p, L) for p in cfg.protocols for L in g["distances_km"]]

    def cell(i, c):
        p, L = c
        ch = _chain(cfg, _uniform_lengths(L, g["n_repeaters"]), g["tau_coh_s"], g["cutoff_s"])
        seed = derive_seed(cfg.seed, i)  # shared by both runs of the pair
        return on.report(ch, p, seed), off.report(ch, p, seed)

    table = Table(("L_km", "protocol", "skr_delay_hz", "stderr_skr_delay", "skr_no_delay_hz",
                   "stderr_skr_no_delay", "fidelity_delay", "stderr_fidelity_delay",
                   "fidelity_no_delay", "stderr_fidelity_no_delay", "ebit_rate_delay_hz",
                   "ebit_rate_no_delay_hz", "skr_gap", "status"))
    for (p, L), (a, b) in zip(cells, map_cells(cell, cells)):
        sa, sb, fa, fb = a["skr"], b["skr"], a["fidelity"], b["fidelity"]
        gap = 1.0 - sa.skr_hz / sb.skr_hz if sb.skr_hz > 0 else None
        status = "ok" if sa.status == "ok" and sb.status == "ok" else (
            sa.status if sa.status != "ok" else sb.status)
        table.add(L, p, sa.skr_hz, sa.stderr_skr, sb.skr_hz, sb.stderr_skr, fa.fidelity_e2e,
                  fa.stderr_fidelity, fb.fidelity_e2e, fb.stderr_fidelity, sa.ebit_rate_hz,
                  sb.ebit_rate_hz, gap, status)
    return _finish(cfg, table, t0)


def sample_placements(total_km: float, n_repeaters: int, min_spacing_km: float, count: int,
                      seed: int) -> np.ndarray:
    """``count`` rows of ``n_repeaters + 1`` link lengths, each >= the spacing, summing to the total.

    The slack above the minimum spacing is split uniformly over the simplex.
    """
    slack = total_km - (n_repeaters + 1) * min_spacing_km
    if slack < 0:
        raise ValueError("minimum spacing cannot be met on the given total length")
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n_repeaters + 1), size=count)
    return min_spacing_km + slack * w


def _histogram(table: Table, quantity: str, cutoff, groups: Dict[str, np.ndarray], bins: int):
    vals = np.concatenate(list(groups.values()))
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return
    edges = np.histogram_bin_edges(vals, bins=bins)
    for p, v in groups.items():
        counts, _ = np.histogram(v[np.isfinite(v)], bins=edges)
        for k, n in enumerate(counts):
            table.add(quantity, cutoff, p, edges[k], edges[k + 1], int(n))


def random_placement(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    placements = sample_placements(g["total_km"], g["n_repeaters"], g["min_spacing_km"],
                                   g["n_placements"], cfg.seed)
    cut_settings = [None] + ([g["cutoff_s"]] if g["cutoff_s"] is not None else [])

    def cell(i, lengths):
        seed = derive_seed(cfg.seed, i)
        out = []
        for c in cut_settings:
            ch = _chain(cfg, lengths, g["tau_coh_s"], c)
            out.extend((c, p, ev.report(ch, p, seed)) for p in cfg.protocols)
        return out

    table = Table(("placement", "positions_km", "cutoff_s", "protocol") + METRIC_COLUMNS)
    collected: Dict[tuple, list] = {}
    for i, (lengths, res) in enumerate(zip(placements, map_cells(cell, list(placements)))):
        pos = ";".join(repr(float(x)) for x in np.cumsum(lengths)[:-1])
        for c, p, reps in res:
            table.add(i, pos, c, p, *metrics(reps))
            collected.setdefault((c, p), []).append((reps["skr"].ebit_rate_hz, reps["skr"].skr_hz))
    hist = Table(("quantity", "cutoff_s", "protocol", "bin_lo", "bin_hi", "count"))
    for c in cut_settings:
        for q, col in (("ebit_rate_hz", 0), ("skr_hz", 1)):
            groups = {p: np.array([v[col] for v in collected[(c, p)]]) for p in cfg.protocols}
            _histogram(hist, q, c, groups, g["hist_bins"])
    return _finish(cfg, table, t0, extra={"histogram": hist})


def topology_study(cfg: ExperimentConfig) -> SweepResult:
    t0 = time.perf_counter()
    g = cfg.grid
    ev = Evaluator.from_config(cfg)
    graph = load_surfnet(g["inflation"]) if g["graphml"] is None else load_graphml(g["graphml"], g["inflation"])
    sel = select_user_pairs(graph, g["min_km"], g["max_km"], g["min_repeaters"], g["n_pairs"], cfg.seed)
    taus = sorted(_as_list(g["tau_coh_s"]))
    skw = search_kwargs(g, cfg.classical_delay)
    pairs = list(sel.pairs)
    cells = [(p, pair) for p in cfg.protocols for pair in pairs]

    def chain_for(pair):
        return chain_from_pair(graph, pair, **cfg.physics.chain_kwargs())

    def optimise(i, c):
        p, pair = c
        ch = chain_for(pair)
        scan = scan_cutoffs(ev, ch, p, cutoff_grid(ch, **skw), taus, derive_seed(cfg.seed, i))
        allowed = len(scan.cutoffs) - (0 if g["include_no_cutoff"] else 1)
        out = []
        for j in range(len(taus)):
            skrs = scan.skr(j)
            b = argmax_cutoff(scan.cutoffs[:allowed], skrs[:allowed])
            out.append((scan.cutoffs[b], float(skrs[b]), float(skrs[-1])))
        return out

    best = map_cells(optimise, cells)

    # per (protocol, tau_coh): mean of the finite optimal cutoffs over pairs with a key
    avg_cut: Dict[tuple, Optional[float]] = {}
    for p in cfg.protocols:
        for j, t in enumerate(taus):
            vals = [best[i][j][0] for i, (pp, _) in enumerate(cells)
                    if pp == p and best[i][j][1] > 0 and math.isfinite(best[i][j][0])]
            avg_cut[(p, t)] = float(np.mean(vals)) if vals else None

    def at_average(i, c):
        p, pair = c
        ch = chain_for(pair)
        seed = derive_seed(cfg.seed, i)
        out = []
        for t in taus:
            reps = ev.report(ch.with_cutoff(avg_cut[(p, t)]).with_tau_coh(t), p, seed)
            out.append(reps["skr"].skr_hz)
        return out

    avg = map_cells(at_average, cells)

    table = Table(("src", "dst", "path_length_km", "n_repeaters", "tau_coh_s", "protocol",
                   "best_cutoff_s", "opt_skr_hz", "avg_cutoff_s", "avg_cutoff_skr_hz",
                   "nocut_skr_hz", "status"))
    for j, t in enumerate(taus):
        for i, (p, pair) in enumerate(cells):
            c, s, s0 = best[i][j]
            table.add(pair.src, pair.dst, pair.path_length_km, pair.n_repeaters, t, p,
                      c if s > 0 else None, s, avg_cut[(p, t)], avg[i][j], s0,
                      "ok" if s > 0 else "infeasible")

    agg = Table(("tau_coh_s", "protocol", "n_pairs", "mean_opt_skr_hz", "mean_avg_cutoff_skr_hz",
                 "mean_nocut_skr_hz", "avg_cutoff_s", "cutoff_q1_s", "cutoff_median_s",
                 "cutoff_q3_s", "n_no_cutoff_optimal", "n_infeasible"))
    for p in cfg.protocols:
        idx = [i for i, (pp, _) in enumerate(cells) if pp == p]
        for j, t in enumerate(taus):
            opt = np.array([best[i][j][1] for i in idx])
            fin = [best[i][j][0] for i in idx if best[i][j][1] > 0 and math.isfinite(best[i][j][0])]
            q = np.percentile(fin, [25, 50, 75]) if fin else [None] * 3
            agg.add(t, p, len(idx), float(opt.mean()), float(np.mean([avg[i][j] for i in idx])),
                    float(np.mean([best[i][j][2] for i in idx])), avg_cut[(p, t)], *q,
                    sum(1 for i in idx if best[i][j][1] > 0 and math.isinf(best[i][j][0])),
                    int(np.sum(opt <= 0)))
    return _finish(cfg, table, t0, extra={"aggregate": agg}, graph=graph.name,
                   n_qualifying_pairs=sel.n_qualifying, n_selected_pairs=len(pairs))


RUNNERS: Dict[str, Callable[[ExperimentConfig], SweepResult]] = {
    "one_repeater_sweep": one_repeater_sweep,
    "cutoff_sweep": cutoff_sweep,
    "opt_skr_heatmap": opt_skr_heatmap,
    "feasible_region": feasible_region,
    "cc_delay_compare": cc_delay_compare,
    "random_placement": random_placement,
    "topology_study": topology_study,
}


def run(cfg: ExperimentConfig) -> SweepResult:
    return RUNNERS[cfg.experiment](cfg)
