"""Command-line entry point: ``clgnet {gen,infer,track,experiment}``.

Exit codes: 0 ok, 2 usage or input error, 3 inference-domain error
(impossible evidence, lost track, cap exceeded), 4 numerical failure.
Set ``CLG_LOG`` to a logging level name (``INFO``, ``DEBUG``) for progress
messages on stderr.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import os
import sys
from dataclasses import fields

import numpy as np

from .benchmarks import SubsetSumInstance, TankParams, gen_tanks, gen_theorem1, gen_theorem2, random_instance
from .dbn import (omniscient_kf, parse_tbn, rows_to_csv, scenario_from_dict, serialize_tbn, simulate, track,
                  tracking_rows)
from .errors import ClgError, InferenceError, NumericalError, TrackingLostError
from .experiments import EXPERIMENTS, config_from_dict, fmt, run_experiment, summary_json
from .inference import (EXACT_CAP, HypothesisSpace, Query, answer_enum, answer_exact, answer_gibbs, answer_lw,
                        estimate_trace, gibbs_chain)
from .model import evidence_from_dict, loads_json, parse_network, serialize_network, validate

log = logging.getLogger("clgnet")

EXIT_OK, EXIT_USAGE, EXIT_INFERENCE, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


# ---- helpers ---------------------------------------------------------------------


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _parse_seeds(text: str) -> tuple[int, ...]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    return tuple(seeds)


def _seed(args) -> int:
    if args.seed is None:
        print(f"seed: {DEFAULT_SEED} (default)", file=sys.stderr)
        return DEFAULT_SEED
    return args.seed


# ---- gen --------------------------------------------------------------------------


def _instance(doc: dict, args, seed: int) -> SubsetSumInstance:
    if "s" in doc:
        try:
            return SubsetSumInstance(tuple(doc["s"]), int(doc["L"]), float(doc.get("C", 2.0)), doc.get("eps"),
                                     float(doc.get("a_prior0", 0.5)), float(doc.get("b_prior0", 0.5)))
        except KeyError as exc:
            raise UsageError(f"instance needs field {exc.args[0]!r}") from None
    n = int(doc.get("n", args.n or 10))
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, int(doc.get("s_max", 20)), float(doc.get("C", 2.0)), valid=True)
    while inst.n != n:
        inst = random_instance(rng, n, int(doc.get("s_max", 20)), float(doc.get("C", 2.0)), valid=True)
    return inst


def cmd_gen(args) -> int:
    doc = loads_json(_read(args.params)) if args.params else {}
    doc.update(_overrides(args.set))
    if args.kind in ("theorem1", "theorem2"):
        inst = _instance(doc, args, _seed(args))
        net = gen_theorem1(inst) if args.kind == "theorem1" else gen_theorem2(inst)
        report = validate(net)
        if not report.ok:
            raise NumericalError(f"generated network failed validation: {report.violations}")
        log.info("instance s=%s L=%d C=%g", list(inst.s), inst.L, inst.C)
        _emit(serialize_network(net), args.out)
        return EXIT_OK
    if args.tanks is not None:
        doc["num_tanks"] = args.tanks
    known = {f.name for f in fields(TankParams)}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown tank parameters {sorted(unknown)}")
    if "measured" in doc and doc["measured"] is not None:
        doc["measured"] = tuple(doc["measured"])
    _emit(serialize_tbn(gen_tanks(TankParams(**doc))), args.out)
    return EXIT_OK


# ---- infer -------------------------------------------------------------------------


def _query_from_doc(doc: dict) -> tuple[Query, dict]:
    unknown = set(doc) - {"q_discrete", "q_continuous", "evidence", "algorithm", "budget", "seed", "per_value",
                          "scheme", "burn_in", "keep_mixture", "trace", "random_scan", "cap"}
    if unknown:
        raise UsageError(f"unknown query fields {sorted(unknown)}")
    ev = evidence_from_dict(doc.get("evidence", {}))
    return Query(tuple(doc.get("q_discrete", ())), tuple(doc.get("q_continuous", ())), ev), doc


def _result_csv(res) -> str:
    header = list(res.q_discrete) + ["probability"]
    for v in res.q_continuous:
        header += [f"{v}_mean", f"{v}_var"]
    rows = []
    for q, p in res.probabilities.items():
        row = list(q) + [fmt(p)]
        g = res.gaussians.get(q)
        for i, _ in enumerate(res.q_continuous):
            row += [fmt(g.mean[i]), fmt(g.cov[i, i])] if g is not None else ["", ""]
        rows.append(row)
    return rows_to_csv(header, rows)


def _result_json(res) -> str:
    doc = res.to_dict()
    diag = dict(doc["diagnostics"])
    doc["diagnostics"] = {k: v for k, v in diag.items() if not (isinstance(v, float) and not math.isfinite(v))}
    if res.mixtures is not None:
        doc["mixtures"] = [{"assignment": dict(zip(res.q_discrete, q)),
                            "components": [{"log_weight": c.log_weight, "mean": c.dist.mean.tolist(),
                                            "covariance": c.dist.cov.tolist()} for c in m.components]}
                           for q, m in res.mixtures.items()]
    return json.dumps(doc, indent=2, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _trace(space: HypothesisSpace, doc: dict, budget: int, seed: int, burn_in: int) -> str:
    """Anytime convergence table: estimate of the trace target after each prefix."""
    target = doc["trace"].get("target") if isinstance(doc["trace"], dict) else None
    if not target:
        raise UsageError("trace needs a 'target' assignment")
    algo = doc.get("algorithm", "exact")
    rng = np.random.default_rng(seed)
    if algo == "enum":
        stream = [h for h, _ in itertools.islice(space.kbest(), budget)]
    elif algo == "lw":
        stream = [tuple(int(v) for v in r) for r in space.sample(budget, rng)]
    elif algo == "gibbs":
        stream = gibbs_chain(space, budget + burn_in, burn_in, rng)
    else:
        raise UsageError("trace is available for enum, lw and gibbs")
    steps = list(range(1, len(stream) + 1))
    est = estimate_trace(space, stream, steps, target, doc.get("scheme", "likelihood"))
    return rows_to_csv(["generated", "estimate"], [[str(k), fmt(e)] for k, e in zip(steps, est)])


def cmd_infer(args) -> int:
    net = parse_network(_read(args.network))
    report = validate(net)
    if not report.ok:
        raise UsageError("invalid network: " + "; ".join(report.violations))
    query, doc = _query_from_doc(loads_json(_read(args.query)))
    algo = args.algorithm or doc.get("algorithm", "exact")
    budget = int(args.budget if args.budget is not None else doc.get("budget", 1000))
    if budget < 1:
        raise UsageError("budget must be at least 1")
    seed = args.seed if args.seed is not None else doc.get("seed")
    if seed is None and algo in ("lw", "gibbs"):
        seed = _seed(args)
    seed = int(seed or 0)
    burn_in = int(doc.get("burn_in", budget // 10))
    keep = bool(doc.get("keep_mixture", False))
    scheme = doc.get("scheme", "likelihood")
    space = HypothesisSpace(net, query)
    if doc.get("trace") or args.trace:
        if args.trace:
            doc["trace"] = {"target": _overrides(args.trace)}
        doc["algorithm"] = algo
        _emit(_trace(space, doc, budget, seed, burn_in), args.out)
        return EXIT_OK
    rng = np.random.default_rng(seed)
    if algo == "exact":
        cap = int(doc.get("cap", EXACT_CAP))
        res = answer_exact(net, query, cap=cap, keep_mixture=keep, space=space)
    elif algo == "enum":
        res = answer_enum(net, query, budget, per_value=bool(doc.get("per_value", False)), keep_mixture=keep,
                          space=space)
    elif algo == "lw":
        res = answer_lw(net, query, budget, rng, scheme=scheme, keep_mixture=keep, space=space)
    elif algo == "gibbs":
        res = answer_gibbs(net, query, budget, burn_in, rng, scheme=scheme, keep_mixture=keep, space=space,
                           random_scan=bool(doc.get("random_scan", False)))
    else:
        raise UsageError(f"unknown algorithm {algo!r}")
    res.diagnostics["seed"] = seed if algo in ("lw", "gibbs") else None
    _emit(_result_csv(res) if args.format == "csv" else _result_json(res), args.out)
    return EXIT_OK


# ---- track -------------------------------------------------------------------------


def _companion(out: str) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}_omniscient{ext or '.csv'}"


def cmd_track(args) -> int:
    tbn = parse_tbn(_read(args.tbn))
    scen_doc = loads_json(_read(args.scenario))
    scenario = scenario_from_dict(scen_doc)
    seed = args.seed if args.seed is not None else scenario.seed
    if seed is None:
        seed = _seed(args)
    rng = np.random.default_rng(int(seed))
    traj = simulate(tbn, scenario, rng)
    budget = math.inf if args.budget in ("inf", "infinity") else int(args.budget)
    out = args.out or "track.csv"
    status = EXIT_OK
    try:
        beliefs = track(tbn, traj.observations, args.method, budget, n_hypotheses=args.hypotheses,
                        rng=np.random.default_rng([int(seed), 1]))
    except TrackingLostError as exc:
        beliefs = exc.partial
        print(f"tracking lost at step {exc.step}: {exc}", file=sys.stderr)
        status = EXIT_INFERENCE
    kf = omniscient_kf(tbn, traj.modes, traj.observations)
    _emit(rows_to_csv(*tracking_rows(tbn, traj, beliefs=beliefs)), out)
    _emit(rows_to_csv(*tracking_rows(tbn, traj, gaussians=kf)), _companion(out))
    return status


# ---- experiment ------------------------------------------------------------------------


def cmd_experiment(args) -> int:
    doc = loads_json(_read(args.config)) if args.config else {}
    if args.name:
        if doc.get("experiment") not in (None, args.name):
            raise UsageError(f"config is for {doc['experiment']!r}, not {args.name!r}")
        doc["experiment"] = args.name
    if "experiment" not in doc:
        raise UsageError("name an experiment or pass a config with an 'experiment' field")
    params = dict(doc.get("params", {}))
    params.update(_overrides(args.set))
    doc["params"] = params
    if args.seeds:
        doc["seeds"] = _parse_seeds(args.seeds)
    elif args.seed is not None:
        doc["seeds"] = (args.seed,)
    cfg = config_from_dict(doc)
    out_dir = args.out or cfg.out or os.path.join("results", cfg.experiment)
    result = run_experiment(cfg, threads=args.threads)
    paths = result.write(out_dir)
    for p in paths:
        log.info("wrote %s", p)
    sys.stdout.write(summary_json(result.summary))
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (printed when defaulted)")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS if suppress else "json",
                   help="result format for infer")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads for seed sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clgnet", description="Inference in conditional linear Gaussian networks.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a benchmark network")
    _global_flags(g, suppress=True)
    g.add_argument("kind", choices=("theorem1", "theorem2", "tanks"))
    g.add_argument("--params", help="JSON instance or tank parameter file")
    g.add_argument("--n", type=int, help="random subset-sum instance size")
    g.add_argument("--tanks", type=int, help="number of tanks")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("infer", help="answer a query")
    _global_flags(i, suppress=True)
    i.add_argument("network")
    i.add_argument("query")
    i.add_argument("--algorithm", choices=("exact", "enum", "lw", "gibbs"))
    i.add_argument("--budget", type=int, help="K for enum, samples for lw, steps for gibbs")
    i.add_argument("--trace", action="append", metavar="VAR=STATE",
                   help="emit an anytime convergence CSV for this target")
    i.set_defaults(func=cmd_infer)

    t = sub.add_parser("track", help="simulate a scenario and track it")
    _global_flags(t, suppress=True)
    t.add_argument("tbn")
    t.add_argument("scenario")
    t.add_argument("--method", choices=("exact", "enum", "lw", "gibbs"), default="enum")
    t.add_argument("--budget", default="32", help="belief-state entries, or 'inf'")
    t.add_argument("--hypotheses", type=int, default=300, help="hypotheses or samples per step")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("experiment", help="run a reproduction experiment")
    _global_flags(e, suppress=True)
    e.add_argument("name", nargs="?", choices=EXPERIMENTS)
    e.add_argument("--config", help="JSON experiment config")
    e.add_argument("--seeds", help="seed list such as 0-99 or 1,2,5")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override")
    e.set_defaults(func=cmd_experiment)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("CLG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InferenceError as exc:
        print(f"inference error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except ClgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
