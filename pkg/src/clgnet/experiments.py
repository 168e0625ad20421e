"""Experiment runners that emit plot-ready tables.

Each runner takes a settings dataclass and a seed list and returns an
``ExperimentOutput``: named CSV tables plus a JSON-serializable summary.
Nothing here renders plots. Wall-clock times are logged, never written to
the tables, so repeated runs with the same seeds produce identical files.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import comb

from .benchmarks import (SubsetSumInstance, TankParams, count_low_fault_hypotheses, gen_tanks, gen_theorem1,
                         paper_scenario)
from .dbn import (Scenario, ScenarioEvent, omniscient_kf, rows_to_csv, simulate,
                  slice_evidence, track, tracking_rows, unroll)
from .errors import InputError, TrackingLostError
from .inference import (HypothesisSpace, Query, answer_enum, answer_exact, answer_gibbs, answer_lw,
                        estimate_trace, gibbs_chain)
from .model import Evidence

log = logging.getLogger(__name__)

EXPERIMENTS = ("fig2a", "rarefault", "x5evidence", "fig2b", "track5")


def fmt(x) -> str:
    """Locale-free float text with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


@dataclass
class ExperimentOutput:
    name: str
    tables: dict[str, tuple[list[str], list[list]]]
    summary: dict

    def csv(self, table: str) -> str:
        header, rows = self.tables[table]
        return rows_to_csv(header, [[fmt(v) for v in r] for r in rows])

    def write(self, out_dir: str) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for t in self.tables:
            path = os.path.join(out_dir, f"{self.name}_{t}.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.csv(t))
            paths.append(path)
        path = os.path.join(out_dir, f"{self.name}_summary.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(summary_json(self.summary))
        paths.append(path)
        return paths


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map, optionally on worker threads."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def checkpoints(n: int) -> list[int]:
    """1, 2, 4, ... up to ``n``, always ending at ``n``."""
    out, k = [], 1
    while k < n:
        out.append(k)
        k *= 2
    out.append(n)
    return out


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


# ---- subset-sum instances -------------------------------------------------------


def fig2a_instance(seed: int, n: int = 10, s_max: int = 20, C: float = 2.0) -> SubsetSumInstance:
    """Uniform-prior instance whose L is the sum of a random nonempty subset."""
    rng = np.random.default_rng(seed)
    s = [int(v) for v in rng.integers(1, s_max + 1, n)]
    while True:
        mask = rng.random(n) < 0.5
        if mask.any():
            break
    return SubsetSumInstance(tuple(s), int(sum(v for v, m in zip(s, mask) if m)), C)


def rare_instance(seed: int, n: int = 10, s_max: int = 20, C: float = 1e14, a_prior0: float = 0.999,
                  split: int = 5, b_prior0: float = 0.999) -> tuple[SubsetSumInstance, int, int]:
    """Instance with L = s_i + s_j, i among the first ``split`` elements and j after.

    Elements are distinct and {i, j} is the only subset summing to L, so the
    sole explanation is a double fault. Returns the instance
    and the (0-based) positions i, j.
    """
    if not 1 <= split < n:
        raise InputError("split must leave elements on both sides")
    if s_max < n:
        raise InputError("need s_max >= n for distinct elements")
    rng = np.random.default_rng(seed)
    while True:
        s = [int(v) for v in rng.choice(np.arange(1, s_max + 1), n, replace=False)]
        i = int(rng.integers(0, split))
        j = int(rng.integers(split, n))
        L = s[i] + s[j]
        if count_subsets(s, L) == 1:
            return SubsetSumInstance(tuple(s), L, C, a_prior0=a_prior0, b_prior0=b_prior0), i, j


def count_subsets(s, L) -> int:
    """Number of subsets of ``s`` summing to ``L`` (dynamic programming)."""
    ways = {0: 1}
    for v in s:
        nxt = dict(ways)
        for r, c in ways.items():
            nxt[r + v] = nxt.get(r + v, 0) + c
        ways = nxt
    return ways.get(L, 0)


def _subset_sum(inst: SubsetSumInstance, assignment: dict) -> int:
    return sum(v for k, v in enumerate(inst.s, start=1) if assignment[f"A_{k}"] == "1")


def _correct_flags(space: HypothesisSpace, inst: SubsetSumInstance, xs) -> list[bool]:
    """Whether each hypothesis has B=1 and a subset summing to L."""
    out = []
    for x in xs:
        a = space.assignment(x)
        out.append(a["B"] == "1" and _subset_sum(inst, a) == inst.L)
    return out


def _first_index(flags) -> int | None:
    for k, f in enumerate(flags, start=1):
        if f:
            return k
    return None


# ---- uniform subset sum ------------------------------------------------------------


@dataclass(frozen=True)
class Fig2aSettings:
    n: int = 10
    s_max: int = 20
    C: float = 2.0
    instance_seed: int = 0
    max_K: int = 1024
    samples: int = 4096
    gibbs_burn_in: int = 0
    tolerance: float = 0.05


def settle_point(cps, est, target: float, tol: float) -> int | None:
    """First checkpoint from which every later estimate stays within ``tol``."""
    settled = None
    for k, e in zip(cps, est):
        if math.isnan(e) or abs(e - target) >= tol:
            settled = None
        elif settled is None:
            settled = k
    return settled


def _trace_rows(algo, seed, cps, est, exact):
    return [[algo, seed, k, e, abs(e - exact) if not math.isnan(e) else math.nan] for k, e in zip(cps, est)]


def run_fig2a(cfg: Fig2aSettings, seeds: Sequence[int], threads: int = 1) -> ExperimentOutput:
    inst = fig2a_instance(cfg.instance_seed, cfg.n, cfg.s_max, cfg.C)
    net = gen_theorem1(inst)
    query = Query(("B",), (), Evidence({}, {"Y": float(inst.L)}))
    space = HypothesisSpace(net, query)
    exact = answer_exact(net, query, space=space).prob(B="1")
    target = {"B": "1"}

    # enumeration per value of B: prefix K holds the K best A-assignments for each
    streams = [list(h for h, _ in _islice(space.kbest({"B": b}), cfg.max_K)) for b in (0, 1)]
    inter = [h for pair in zip(*streams) for h in pair]
    ks = checkpoints(cfg.max_K)
    enum_est = estimate_trace(space, inter, [2 * k for k in ks], target)
    n_valid = sum(_correct_flags(space, inst, streams[1]))
    total = 2 ** inst.n
    rows = _trace_rows("enum", "", ks, enum_est, exact)
    # expected estimate when the valid subsets sit at uniformly random positions
    for k in ks:
        found = 1.0 - comb(total - n_valid, k, exact=False) / comb(total, k, exact=False) if n_valid else 0.0
        rows.append(["enum_expected", "", k, exact * found, abs(exact * found - exact)])
    enum_within = settle_point(ks, enum_est, exact, 0.01)

    cps = checkpoints(cfg.samples)

    def one_seed(seed):
        rng = _rng(seed, 0)
        lw_rows = [tuple(int(v) for v in r) for r in space.sample(cfg.samples, rng)]
        space.weights(list(dict.fromkeys(lw_rows)))
        lw_est = estimate_trace(space, lw_rows, cps, target)
        chain = gibbs_chain(space, cfg.samples + cfg.gibbs_burn_in, cfg.gibbs_burn_in, _rng(seed, 1))
        gb_est = estimate_trace(space, chain, cps, target)
        out = []
        for algo, stream, est in (("lw", lw_rows, lw_est), ("gibbs", chain, gb_est)):
            first_ok = _first_index(_correct_flags(space, inst, stream))
            first_close = settle_point(cps, est, exact, cfg.tolerance)
            out.append((algo, _trace_rows(algo, seed, cps, est, exact), first_ok, first_close))
        return out

    t0 = time.perf_counter()
    per_seed = _map(one_seed, list(seeds), threads)
    log.info("fig2a: %d seeds in %.2fs", len(seeds), time.perf_counter() - t0)
    seed_rows = []
    consistent = {"lw": True, "gibbs": True}
    for seed, res in zip(seeds, per_seed):
        for algo, trows, first_ok, first_close in res:
            rows.extend(trows)
            seed_rows.append([algo, seed, first_ok if first_ok else "", first_close if first_close else ""])
            if first_close is not None and (first_ok is None or first_close < first_ok):
                consistent[algo] = False
    mean_rows = []
    for algo in ("lw", "gibbs"):
        for idx, k in enumerate(cps):
            vals = np.array([res[0 if algo == "lw" else 1][1][idx][3] for res in per_seed], dtype=float)
            vals = np.nan_to_num(vals, nan=0.0)
            mean_rows.append([algo, k, float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0])
    summary = {
        "instance": {"s": list(inst.s), "L": inst.L, "C": inst.C},
        "exact": exact,
        "enum_at_max_K": float(enum_est[-1]),
        "enum_first_K_within_0.01": enum_within,
        "valid_assignments": n_valid,
        "lw_close_only_after_correct": consistent["lw"],
        "gibbs_close_only_after_correct": consistent["gibbs"],
        "lw_final_mean": mean_rows[len(cps) - 1][2],
        "gibbs_final_mean": mean_rows[-1][2],
        "seeds": len(seeds),
    }
    return ExperimentOutput("fig2a", {
        "curves": (["algorithm", "seed", "generated", "estimate", "abs_error"], rows),
        "mean_curves": (["algorithm", "generated", "mean_estimate", "std_estimate"], mean_rows),
        "first_hits": (["algorithm", "seed", "first_correct_sample", "first_within_tolerance"], seed_rows),
    }, summary)


def _islice(it, n):
    for k, v in enumerate(it):
        if k >= n:
            return
        yield v


# ---- rare faults, with and without X_5 -------------------------------------------------


@dataclass(frozen=True)
class RareFaultSettings:
    n: int = 10
    s_max: int = 20
    C: float = 1e14
    a_prior0: float = 0.999
    b_prior0: float = 0.999
    instance_seed: int = 0
    K: int = 100
    samples: int = 50000
    gibbs_burn_in: int = 1000
    split: int = 5
    threshold: float = 0.01


def _rare_setup(cfg: RareFaultSettings, observe_x5: bool):
    inst, i, j = rare_instance(cfg.instance_seed, cfg.n, cfg.s_max, cfg.C, cfg.a_prior0, cfg.split, cfg.b_prior0)
    net = gen_theorem1(inst)
    cont = {"Y": float(inst.L)}
    if observe_x5:
        cont[f"X_{cfg.split}"] = float(inst.s[i])
    query = Query(("B",), (), Evidence({}, cont))
    return inst, i, j, net, query, HypothesisSpace(net, query)


def _rare_run(name: str, cfg: RareFaultSettings, seeds, threads, observe_x5: bool) -> ExperimentOutput:
    inst, i, j, net, query, space = _rare_setup(cfg, observe_x5)
    enum = answer_enum(net, query, cfg.K, per_value=True, space=space)
    p_enum = enum.prob(B="1")
    exact = answer_exact(net, query, space=space).prob(B="1")
    n_low = sum(int(comb(inst.n, k, exact=True)) for k in range(3))

    def one_seed(seed):
        lw = answer_lw(net, query, cfg.samples, _rng(seed, 0), space=space)
        gb = answer_gibbs(net, query, cfg.samples + cfg.gibbs_burn_in, cfg.gibbs_burn_in, _rng(seed, 1),
                          space=space)
        return lw.prob(B="1"), lw.diagnostics["distinct"], gb.prob(B="1"), gb.diagnostics["distinct"]

    t0 = time.perf_counter()
    res = _map(one_seed, list(seeds), threads)
    log.info("%s: %d seeds in %.2fs", name, len(seeds), time.perf_counter() - t0)
    rows = [[seed, a, b, c, d] for seed, (a, b, c, d) in zip(seeds, res)]
    lw = np.array([r[1] for r in rows])
    gb = np.array([r[3] for r in rows])
    summary = {
        "instance": {"s": list(inst.s), "L": inst.L, "C": inst.C, "a_prior0": inst.a_prior0, "b_prior0": inst.b_prior0,
                     "pair": [i + 1, j + 1]},
        "observed": sorted(query.evidence.continuous),
        "exact": exact,
        "enum_K": cfg.K,
        "enum_estimate": p_enum,
        "low_fault_count_per_B": n_low,
        "lw_fraction_below_threshold": float(np.mean(lw < cfg.threshold)),
        "gibbs_fraction_below_threshold": float(np.mean(gb < cfg.threshold)),
        "lw_fraction_positive": float(np.mean(lw > 0)),
        "gibbs_fraction_positive": float(np.mean(gb > 0)),
        "lw_mean": float(lw.mean()),
        "gibbs_mean": float(gb.mean()),
        "seeds": len(seeds),
    }
    return ExperimentOutput(name, {
        "estimates": (["seed", "lw_estimate", "lw_distinct", "gibbs_estimate", "gibbs_distinct"], rows),
    }, summary)


def run_rarefault(cfg: RareFaultSettings, seeds: Sequence[int], threads: int = 1) -> ExperimentOutput:
    return _rare_run("rarefault", cfg, seeds, threads, observe_x5=False)


def run_x5evidence(cfg: RareFaultSettings, seeds: Sequence[int], threads: int = 1) -> ExperimentOutput:
    return _rare_run("x5evidence", cfg, seeds, threads, observe_x5=True)


# ---- unrolled tanks with a double burst -----------------------------------------------


@dataclass(frozen=True)
class Fig2bSettings:
    num_tanks: int = 5
    slices: int = 3
    fault_prior: float = 1e-4
    bursts: tuple[str, ...] = ("12", "34")
    event_t: int = 1
    samples: int = 200000
    gibbs_burn_in: int = 1000
    K: int | None = None            # defaults to the count of hypotheses with <= 2 faults


def fig2b_setup(cfg: Fig2bSettings, seed: int):
    p = TankParams(num_tanks=cfg.num_tanks, burst_prior=cfg.fault_prior, drift_prior=cfg.fault_prior,
                   sensor_prior=cfg.fault_prior)
    tbn = gen_tanks(p)
    sc = Scenario(cfg.slices, tuple(ScenarioEvent(cfg.event_t, f"M_{k}", "burst") for k in cfg.bursts))
    traj = simulate(tbn, sc, _rng(seed, 2))
    net = unroll(tbn, cfg.slices)
    last = cfg.slices - 1
    query = Query(tuple(f"{d}@{last}" for d in tbn.discrete_interface), (), slice_evidence(traj.observations))
    truth = tuple(traj.modes[last][d] for d in tbn.discrete_interface)
    return tbn, net, query, truth


def run_fig2b(cfg: Fig2bSettings, seeds: Sequence[int], threads: int = 1) -> ExperimentOutput:
    tbn0 = gen_tanks(TankParams(num_tanks=cfg.num_tanks, burst_prior=cfg.fault_prior,
                                drift_prior=cfg.fault_prior, sensor_prior=cfg.fault_prior))
    K = cfg.K or count_low_fault_hypotheses(tbn0, cfg.slices, 2)

    def top(res):
        q = max(res.probabilities, key=lambda k: (res.probabilities[k], k))
        return q, res.probabilities[q]

    def one_seed(seed):
        tbn, net, query, truth = fig2b_setup(cfg, seed)
        space = HypothesisSpace(net, query)
        out = []
        for algo in ("enum", "lw", "gibbs"):
            if algo == "enum":
                r = answer_enum(net, query, K, space=space)
            elif algo == "lw":
                r = answer_lw(net, query, cfg.samples, _rng(seed, 0), space=space)
            else:
                r = answer_gibbs(net, query, cfg.samples + cfg.gibbs_burn_in, cfg.gibbs_burn_in, _rng(seed, 1),
                                 space=space)
            q, pq = top(r)
            out.append([algo, seed, q == truth, r.probabilities.get(truth, 0.0), pq,
                        ";".join(q), r.diagnostics["distinct"]])
        return out

    t0 = time.perf_counter()
    res = _map(one_seed, list(seeds), threads)
    log.info("fig2b: %d seeds in %.2fs", len(seeds), time.perf_counter() - t0)
    rows = [r for seed_rows in res for r in seed_rows]

    def frac(algo):
        return float(np.mean([r[2] for r in rows if r[0] == algo]))

    summary = {"K": K, "fault_prior": cfg.fault_prior, "bursts": list(cfg.bursts), "seeds": len(seeds),
               "enum_found_fraction": frac("enum"), "lw_found_fraction": frac("lw"),
               "gibbs_found_fraction": frac("gibbs")}
    return ExperimentOutput("fig2b", {
        "results": (["algorithm", "seed", "top_is_truth", "truth_probability", "top_probability", "top_mode",
                     "distinct"], rows),
    }, summary)


# ---- tracking the five-tank scenario -------------------------------------------------


@dataclass(frozen=True)
class Track5Settings:
    horizon: int = 30
    method: str = "enum"
    budget: int = 32
    hypotheses: int = 300
    lag: int = 3
    rmse_vars: tuple[str, ...] = ("C_12", "C_45", "P_5")
    rmse_factor: float = 3.0


def mode_mismatches(beliefs, traj, scenario: Scenario, lag: int) -> list[int]:
    """Steps whose top mode differs from the truth outside the grace window
    [t_e, t_e + lag] after an event."""
    grace = set()
    for e in scenario.events:
        grace.update(range(e.t, e.t + lag + 1))
    bad = []
    for t, b in enumerate(beliefs):
        modes, _ = b.top_mode()
        truth = tuple(traj.modes[t][d] for d in b.discrete)
        if modes != truth and t not in grace:
            bad.append(t)
    return bad


def run_track5(cfg: Track5Settings, seeds: Sequence[int], threads: int = 1) -> ExperimentOutput:
    tbn = gen_tanks(TankParams())
    sc = paper_scenario(cfg.horizon)

    def one_seed(seed):
        traj = simulate(tbn, sc, _rng(seed, 2))
        lost = None
        try:
            beliefs = track(tbn, traj.observations, cfg.method, cfg.budget, n_hypotheses=cfg.hypotheses,
                            rng=_rng(seed, 0))
        except TrackingLostError as exc:
            beliefs, lost = exc.partial, exc.step
        kf = omniscient_kf(tbn, traj.modes, traj.observations)
        return traj, beliefs, kf, lost

    t0 = time.perf_counter()
    res = _map(one_seed, list(seeds), threads)
    log.info("track5: %d seeds in %.2fs", len(seeds), time.perf_counter() - t0)
    tables = {}
    summary_rows = []
    cont = tbn.continuous_interface
    for seed, (traj, beliefs, kf, lost) in zip(seeds, res):
        tables[f"seed{seed}_tracker"] = tracking_rows(tbn, traj, beliefs=beliefs)
        tables[f"seed{seed}_omniscient"] = tracking_rows(tbn, traj, gaussians=kf)
        bad = mode_mismatches(beliefs, traj, sc, cfg.lag)
        row = [seed, lost is None, len(bad) == 0 and lost is None, len(bad), beliefs[-1].discarded if beliefs else 1.0]
        for v in cfg.rmse_vars:
            i = cont.index(v)
            n = len(beliefs)
            truth = np.array([traj.values[t][v] for t in range(n)])
            est = np.array([b.collapsed().mean[i] for b in beliefs])
            ref = np.array([g.mean[g.scope.index(v)] for g in kf[:n]])
            r_t = float(np.sqrt(np.mean((est - truth) ** 2))) if n else math.nan
            r_k = float(np.sqrt(np.mean((ref - truth) ** 2))) if n else math.nan
            row += [r_t, r_k, r_t / r_k if r_k > 0 else math.inf]
        summary_rows.append(row)
    header = ["seed", "completed", "modes_ok", "mismatched_steps", "final_discarded"]
    for v in cfg.rmse_vars:
        header += [f"{v}_rmse", f"{v}_kf_rmse", f"{v}_ratio"]
    tables["summary"] = (header, summary_rows)
    ratio_cols = [header.index(f"{v}_ratio") for v in cfg.rmse_vars]
    summary = {
        "seeds": len(seeds), "budget": cfg.budget, "method": cfg.method, "hypotheses": cfg.hypotheses,
        "mode_fraction": float(np.mean([r[2] for r in summary_rows])),
        "completed_fraction": float(np.mean([r[1] for r in summary_rows])),
        "max_rmse_ratio": {v: float(max(r[c] for r in summary_rows)) for v, c in zip(cfg.rmse_vars, ratio_cols)},
        "rmse_within_factor_fraction": float(np.mean([all(r[c] <= cfg.rmse_factor for c in ratio_cols)
                                                      for r in summary_rows])),
        "rmse_failing_seeds": [r[0] for r in summary_rows if any(r[c] > cfg.rmse_factor for c in ratio_cols)],
        "events": [[e.t, e.component, e.mode] for e in sc.events],
    }
    return ExperimentOutput("track5", tables, summary)


# ---- dispatch -----------------------------------------------------------------------------


SETTINGS = {"fig2a": Fig2aSettings, "rarefault": RareFaultSettings, "x5evidence": RareFaultSettings,
            "fig2b": Fig2bSettings, "track5": Track5Settings}
RUNNERS = {"fig2a": run_fig2a, "rarefault": run_rarefault, "x5evidence": run_x5evidence,
           "fig2b": run_fig2b, "track5": run_track5}
DEFAULT_SEEDS = {"fig2a": 100, "rarefault": 100, "x5evidence": 100, "fig2b": 20, "track5": 20}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in RUNNERS:
            raise InputError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        seeds = tuple(int(s) for s in self.seeds) or tuple(range(DEFAULT_SEEDS[self.experiment]))
        object.__setattr__(self, "seeds", seeds)
        self.settings()  # validates parameter names

    def settings(self):
        cls = SETTINGS[self.experiment]
        known = {f.name: f for f in fields(cls)}
        unknown = set(self.params) - set(known)
        if unknown:
            raise InputError(f"unknown parameters for {self.experiment}: {sorted(unknown)}")
        base = cls()
        vals = {}
        for k, v in self.params.items():
            cur = getattr(base, k)
            vals[k] = tuple(v) if isinstance(cur, tuple) and isinstance(v, (list, tuple)) else v
        s = replace(base, **vals)
        for name in ("samples", "K", "max_K", "budget", "hypotheses", "horizon"):
            val = getattr(s, name, None)
            if val is not None and val < 1:
                raise InputError(f"{name} must be at least 1")
        return s


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    try:
        exp = doc.pop("experiment")
    except KeyError:
        raise InputError("experiment config needs an 'experiment' field") from None
    seeds = doc.pop("seeds", ())
    out = doc.pop("out", None)
    params = dict(doc.pop("params", {}))
    params.update(doc)
    return ExperimentConfig(exp, tuple(seeds), params, out)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentOutput:
    out = RUNNERS[cfg.experiment](cfg.settings(), cfg.seeds, threads)
    out.summary["settings"] = asdict(cfg.settings())
    return out
