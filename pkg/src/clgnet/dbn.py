"""Two-slice temporal networks: unrolling, belief-state tracking, simulation.

Template naming: a transition node refers to the previous slice of ``X`` as
``"X@prev"``. Unrolled and simulated variables are named ``"X@t"``.

A tracking step is inference in a static step network. Its root ``@entry``
node carries the current belief weights; the previous-slice discrete
interface is a deterministic function of the entry, and the previous-slice
continuous interface is the entry's Gaussian written as a chain of linear
regressions. The transition fragment hangs below.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (DegenerateResultError, ImpossibleEvidenceError, InputError, StructureError,
                     TrackingLostError)
from .gaussian import GaussianDist, GaussianMixture, WeightedGaussian, collapse
from .inference import (HypothesisSpace, Query, QueryResult, answer_enum, answer_exact, answer_gibbs,
                        answer_lw)
from .model import (ContinuousNode, DiscreteNode, Evidence, Network, continuous_node, discrete_node,
                    loads_json, network_from_dict, node_from_dict, node_to_dict, validate)

PREV = "@prev"
ENTRY = "@entry"
SCHUR_FLOOR = 1e-12


def slice_name(base: str, t: int) -> str:
    return f"{base}@{t}"


@dataclass(frozen=True, eq=False)
class TwoSliceNet:
    initial: tuple          # slice-0 fragment, base names
    transition: tuple       # slice-t fragment; previous slice referenced as "X@prev"
    observed: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "initial", tuple(self.initial))
        object.__setattr__(self, "transition", tuple(self.transition))
        object.__setattr__(self, "observed", tuple(self.observed))
        a = {n.name: n for n in self.initial}
        b = {n.name: n for n in self.transition}
        for name in self.interface:
            if name not in a or name not in b:
                raise StructureError(f"interface variable {name!r} must exist in both slices")
            if type(a[name]) is not type(b[name]):
                raise StructureError(f"interface variable {name!r} changes kind between slices")
        if set(a) != set(b):
            raise StructureError("both slices must declare the same variables")
        for o in self.observed:
            if o not in b:
                raise StructureError(f"observed variable {o!r} is not in the slice")

    @property
    def interface(self) -> tuple[str, ...]:
        """Variables referenced from the next slice, in transition declaration order."""
        refs = set()
        for n in self.transition:
            refs.update(p[: -len(PREV)] for p in n.parents if p.endswith(PREV))
        return tuple(n.name for n in self.transition if n.name in refs)

    @property
    def discrete_interface(self) -> tuple[str, ...]:
        kinds = {n.name: n for n in self.transition}
        return tuple(v for v in self.interface if isinstance(kinds[v], DiscreteNode))

    @property
    def continuous_interface(self) -> tuple[str, ...]:
        kinds = {n.name: n for n in self.transition}
        order = [n for n in Network(self.initial).topological_order()]
        return tuple(sorted((v for v in self.interface if isinstance(kinds[v], ContinuousNode)),
                            key=order.index))

    def node(self, name: str):
        return next(n for n in self.transition if n.name == name)


def validate_tbn(net: TwoSliceNet) -> tuple[str, ...]:
    """Violations of both slice fragments (checked on the two-slice unrolling)."""
    v = list(validate(Network(net.initial)).violations)
    v += list(validate(unroll(net, 2)).violations)
    return tuple(v)


def _rename(node, t: int):
    def ren(p):
        if p.endswith(PREV):
            return slice_name(p[: -len(PREV)], t - 1)
        return slice_name(p, t)

    if isinstance(node, DiscreteNode):
        return DiscreteNode(slice_name(node.name, t), node.states, tuple(map(ren, node.parents)), node.cpt)
    return ContinuousNode(slice_name(node.name, t), tuple(map(ren, node.discrete_parents)),
                          tuple(map(ren, node.continuous_parents)), node.clg)


def unroll(net: TwoSliceNet, T: int) -> Network:
    """Static network over slices 0..T-1."""
    if T < 1:
        raise InputError("T must be at least 1")
    nodes = [_rename(n, 0) for n in net.initial]
    for t in range(1, T):
        nodes.extend(_rename(n, t) for n in net.transition)
    return Network(tuple(nodes))


def slice_evidence(obs: Sequence[Evidence]) -> Evidence:
    """Merge per-slice evidence into unrolled names."""
    disc, cont = {}, {}
    for t, e in enumerate(obs):
        disc.update({slice_name(k, t): v for k, v in e.discrete.items()})
        cont.update({slice_name(k, t): v for k, v in e.continuous.items()})
    return Evidence(disc, cont)


# ---- serialization -------------------------------------------------------------


def tbn_to_dict(net: TwoSliceNet) -> dict:
    return {"initial": {"nodes": [node_to_dict(n) for n in net.initial]},
            "transition": {"nodes": [node_to_dict(n) for n in net.transition]},
            "observed": list(net.observed)}


def tbn_from_dict(doc: dict) -> TwoSliceNet:
    init = network_from_dict(doc["initial"]).nodes
    trans = tuple(node_from_dict(d, where=f"transition[{i}]") for i, d in enumerate(doc["transition"]["nodes"]))
    return TwoSliceNet(init, trans, tuple(doc.get("observed", ())))


def serialize_tbn(net: TwoSliceNet) -> str:
    return json.dumps(tbn_to_dict(net), indent=1) + "\n"


def parse_tbn(text: str) -> TwoSliceNet:
    return tbn_from_dict(loads_json(text))


# ---- belief state ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BeliefEntry:
    modes: tuple[str, ...]
    log_weight: float
    dist: GaussianDist


@dataclass(frozen=True, eq=False)
class BeliefState:
    """Weighted Gaussians over the continuous interface, keyed by discrete modes.

    Several entries may share a mode assignment when collapsing is off.
    """
    discrete: tuple[str, ...]
    continuous: tuple[str, ...]
    entries: tuple[BeliefEntry, ...]
    budget: float = math.inf
    discarded: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.exp([e.log_weight for e in self.entries])

    def mode_probabilities(self) -> dict[tuple, float]:
        out: dict[tuple, float] = {}
        for e, w in zip(self.entries, self.weights):
            out[e.modes] = out.get(e.modes, 0.0) + float(w)
        return out

    def top_mode(self) -> tuple[tuple, float]:
        probs = self.mode_probabilities()
        best = max(probs.items(), key=lambda kv: kv[1])
        return best

    def mode_marginal(self, name: str) -> dict[str, float]:
        i = self.discrete.index(name)
        out: dict[str, float] = {}
        for m, p in self.mode_probabilities().items():
            out[m[i]] = out.get(m[i], 0.0) + p
        return out

    def collapsed(self) -> GaussianDist:
        return collapse(GaussianMixture(tuple(WeightedGaussian(e.log_weight, e.dist) for e in self.entries)))


def _prune(entries: list[BeliefEntry], budget: float) -> tuple[list[BeliefEntry], float]:
    lw = np.array([e.log_weight for e in entries])
    if lw.size == 0 or np.all(lw == -math.inf):
        raise TrackingLostError("every hypothesis is inconsistent with the observations")
    lw = lw - logsumexp(lw)
    order = sorted(range(len(entries)), key=lambda i: (-lw[i], entries[i].modes))
    order = [i for i in order if lw[i] > -math.inf]
    keep = order if not math.isfinite(budget) else order[: int(budget)]
    dropped = float(np.exp(logsumexp(lw[order[len(keep):]]))) if len(keep) < len(order) else 0.0
    kept_lw = lw[keep]
    kept_lw = kept_lw - logsumexp(kept_lw)
    return [BeliefEntry(entries[i].modes, float(w), entries[i].dist) for i, w in zip(keep, kept_lw)], dropped


def _answer(method, network, query, n_hyp, rng, keep_mixture):
    space = HypothesisSpace(network, query)
    if method == "exact":
        return answer_exact(network, query, keep_mixture=keep_mixture, space=space)
    if method == "enum":
        return answer_enum(network, query, int(n_hyp), keep_mixture=keep_mixture, space=space)
    if rng is None:
        raise InputError(f"method {method!r} needs an rng")
    if method == "lw":
        return answer_lw(network, query, int(n_hyp), rng, keep_mixture=keep_mixture, space=space)
    if method == "gibbs":
        return answer_gibbs(network, query, int(n_hyp), int(n_hyp) // 10, rng,
                            keep_mixture=keep_mixture, space=space)
    raise InputError(f"unknown method {method!r}")


def _interface_query(net: TwoSliceNet, obs: Evidence) -> Query:
    """Query over the interface; observed discrete interface variables are left out."""
    if set(obs.continuous) & set(net.continuous_interface):
        raise InputError("observing a continuous interface variable directly is not supported")
    return Query(tuple(d for d in net.discrete_interface if d not in obs.discrete), net.continuous_interface, obs)


def _full_modes(net: TwoSliceNet, res: QueryResult, obs: Evidence, q: tuple) -> tuple:
    got = dict(zip(res.q_discrete, q))
    return tuple(got[d] if d in got else obs.discrete[d] for d in net.discrete_interface)


def _to_belief(net: TwoSliceNet, res: QueryResult, budget: float, collapse_modes: bool,
               step_diag: dict, obs: Evidence) -> BeliefState:
    entries = []
    if collapse_modes:
        for q, p in res.probabilities.items():
            if p > 0:
                entries.append(BeliefEntry(_full_modes(net, res, obs, q), math.log(p), res.gaussians[q]))
    else:
        for q, mix in res.mixtures.items():
            for c in mix.components:
                entries.append(BeliefEntry(_full_modes(net, res, obs, q), c.log_weight, c.dist))
    kept, dropped = _prune(entries, budget)
    diag = dict(step_diag)
    diag.update({k: res.diagnostics.get(k) for k in ("generated", "distinct", "log_likelihood")})
    diag["entries_before_prune"] = len(entries)
    return BeliefState(net.discrete_interface, net.continuous_interface, tuple(kept), budget, dropped, diag)


def _resolve_collapse(collapse_modes, budget):
    return math.isfinite(budget) if collapse_modes is None else bool(collapse_modes)


def initial_belief(net: TwoSliceNet, obs: Evidence, *, method: str = "exact", budget: float = math.inf,
                   n_hypotheses: int = 1000, rng=None, collapse_modes: bool | None = None) -> BeliefState:
    """Belief over the slice-0 interface given slice-0 observations."""
    collapse_modes = _resolve_collapse(collapse_modes, budget)
    network = Network(net.initial)
    query = _interface_query(net, obs)
    res = _answer(method, network, query, n_hypotheses, rng, keep_mixture=not collapse_modes)
    return _to_belief(net, res, budget, collapse_modes, {"step": 0}, obs)


def step_network(net: TwoSliceNet, belief: BeliefState) -> Network:
    """Static network for one tracking step from ``belief``."""
    m = len(belief.entries)
    w = np.exp(np.array([e.log_weight for e in belief.entries]) - logsumexp([e.log_weight for e in belief.entries]))
    states = [f"e{i}" for i in range(max(m, 2))]
    row = np.zeros(len(states))
    row[:m] = w
    row /= row.sum()
    nodes = [discrete_node(ENTRY, states, (), [row])]
    for j, name in enumerate(belief.discrete):
        node = net.node(name)
        cpt = np.zeros((len(states), len(node.states)))
        for i, e in enumerate(belief.entries):
            cpt[i, node.states.index(e.modes[j])] = 1.0
        for i in range(m, len(states)):
            cpt[i, 0] = 1.0
        nodes.append(discrete_node(name + PREV, node.states, (ENTRY,), cpt))
    cont = belief.continuous
    clg: list[dict] = [dict() for _ in cont]
    for i in range(len(states)):
        g = belief.entries[i].dist if i < m else belief.entries[0].dist
        mu, S = g.mean, g.cov
        for k in range(len(cont)):
            if k == 0:
                beta = np.zeros(0)
                var = S[0, 0]
            else:
                Spp = S[:k, :k]
                Spk = S[:k, k]
                beta = np.linalg.lstsq(Spp, Spk, rcond=None)[0]
                var = S[k, k] - Spk @ beta
            var = max(float(var), SCHUR_FLOOR * max(1.0, abs(S[k, k])))
            a0 = mu[k] - beta @ mu[:k]
            clg[k][(states[i],)] = (float(a0), tuple(float(b) for b in beta), var)
    for k, name in enumerate(cont):
        nodes.append(continuous_node(name + PREV, (ENTRY,), tuple(c + PREV for c in cont[:k]), clg[k]))
    nodes.extend(net.transition)
    return Network(tuple(nodes))


def propagate(net: TwoSliceNet, belief: BeliefState, obs: Evidence, method: str = "enum",
              budget: float = math.inf, *, n_hypotheses: int = 1000, rng=None,
              collapse_modes: bool | None = None, partition=None, step: int | None = None) -> BeliefState:
    """Advance the belief state by one slice given that slice's observations.

    ``collapse_modes`` merges hypotheses sharing the new discrete interface
    into one moment-matched Gaussian; by default this happens only when the
    budget is finite, so unbounded exact tracking stays exact.
    """
    if partition is not None and len(partition) > 1:
        raise InputError("factored belief states are not supported; use a single partition")
    if not belief.entries:
        raise TrackingLostError("empty belief state", step)
    collapse_modes = _resolve_collapse(collapse_modes, budget)
    network = step_network(net, belief)
    query = _interface_query(net, obs)
    try:
        res = _answer(method, network, query, n_hypotheses, rng, keep_mixture=not collapse_modes)
        return _to_belief(net, res, budget, collapse_modes, {"step": step}, obs)
    except TrackingLostError as exc:
        raise TrackingLostError(str(exc), step) from None
    except (DegenerateResultError, ImpossibleEvidenceError) as exc:
        raise TrackingLostError(f"all hypotheses inconsistent ({exc})", step) from None


def track(net: TwoSliceNet, observations: Sequence[Evidence], method: str = "enum",
          budget: float = math.inf, *, n_hypotheses: int = 1000, rng=None,
          collapse_modes: bool | None = None) -> list[BeliefState]:
    """Filtered belief states for every step.

    On loss of track the raised ``TrackingLostError`` carries the beliefs
    computed so far in ``exc.partial``.
    """
    beliefs: list[BeliefState] = []
    try:
        for t, obs in enumerate(observations):
            if t == 0:
                b = initial_belief(net, obs, method=method, budget=budget, n_hypotheses=n_hypotheses,
                                   rng=rng, collapse_modes=collapse_modes)
            else:
                b = propagate(net, beliefs[-1], obs, method, budget, n_hypotheses=n_hypotheses, rng=rng,
                              collapse_modes=collapse_modes, step=t)
            beliefs.append(b)
    except TrackingLostError as exc:
        if exc.step is None:
            exc = TrackingLostError(str(exc), len(beliefs))
        exc.partial = beliefs
        raise exc
    return beliefs


def omniscient_kf(net: TwoSliceNet, true_discrete: Sequence[Mapping[str, str]],
                  observations: Sequence[Evidence]) -> list[GaussianDist]:
    """Kalman filtering with every discrete variable clamped to its true value."""
    out = []
    belief = None
    for t, obs in enumerate(observations):
        modes = {k: v for k, v in true_discrete[t].items()}
        ev = Evidence({**obs.discrete, **modes}, obs.continuous)
        if t == 0:
            network = Network(net.initial)
        else:
            network = step_network(net, belief)
        query = Query((), net.continuous_interface, ev)
        res = answer_exact(network, query)
        g = res.gaussians[()]
        out.append(g)
        key = tuple(modes[d] for d in net.discrete_interface)
        belief = BeliefState(net.discrete_interface, net.continuous_interface, (BeliefEntry(key, 0.0, g),))
    return out


# ---- simulation ------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioEvent:
    t: int
    component: str
    mode: str


@dataclass(frozen=True)
class Scenario:
    horizon: int
    events: tuple[ScenarioEvent, ...] = ()
    seed: int | None = None

    def modes_at(self, net: TwoSliceNet, t: int) -> dict[str, str]:
        modes = {d: net.node(d).states[0] for d in net.discrete_interface}
        for e in sorted(self.events, key=lambda e: e.t):
            if e.t <= t:
                modes[e.component] = e.mode
        return modes

    def check(self, net: TwoSliceNet) -> None:
        for e in self.events:
            if not 0 <= e.t < self.horizon:
                raise InputError(f"event time {e.t} outside horizon {self.horizon}")
            if e.component not in net.discrete_interface:
                raise InputError(f"unknown component {e.component!r}")
            if e.mode not in net.node(e.component).states:
                raise InputError(f"invalid mode {e.mode!r} for {e.component!r}")


def scenario_from_dict(doc: dict) -> Scenario:
    events = tuple(ScenarioEvent(int(e["t"]), str(e["component"]), str(e["mode"])) for e in doc.get("events", ()))
    return Scenario(int(doc["horizon"]), events, doc.get("seed"))


def scenario_to_dict(s: Scenario) -> dict:
    return {"horizon": s.horizon, "events": [{"t": e.t, "component": e.component, "mode": e.mode} for e in s.events],
            "seed": s.seed}


@dataclass(frozen=True, eq=False)
class Trajectory:
    modes: tuple[dict, ...]           # per step: discrete interface assignment
    values: tuple[dict, ...]          # per step: every continuous variable
    observations: tuple[Evidence, ...]


def _sample_slice(nodes, values_prev, modes, rng):
    """One ancestral pass over the continuous nodes of a slice fragment."""
    result: dict[str, float] = {}
    pending = [n for n in nodes if isinstance(n, ContinuousNode)]
    while pending:
        ready = [n for n in pending
                 if all(p.endswith(PREV) or p in result for p in n.continuous_parents)]
        if not ready:
            raise StructureError("cycle among continuous slice variables")
        for n in ready:
            e = n.clg[tuple(modes[p] for p in n.discrete_parents)]
            ys = [values_prev[p[: -len(PREV)]] if p.endswith(PREV) else result[p]
                  for p in n.continuous_parents]
            mean = e.intercept + float(np.dot(e.coeffs, ys)) if ys else e.intercept
            result[n.name] = float(mean + math.sqrt(e.variance) * rng.standard_normal())
            pending.remove(n)
    return result


def simulate(net: TwoSliceNet, scenario: Scenario, rng: np.random.Generator) -> Trajectory:
    """Ancestral sampling with discrete modes dictated by the scenario."""
    scenario.check(net)
    others = [n for n in net.transition if isinstance(n, DiscreteNode) and n.name not in net.discrete_interface]
    modes_seq, values_seq, obs_seq = [], [], []
    prev: dict[str, float] = {}
    for t in range(scenario.horizon):
        modes = scenario.modes_at(net, t)
        full = dict(modes)
        for n in others:  # transient discrete variables take their first state
            full[n.name] = n.states[0]
        nodes = net.initial if t == 0 else net.transition
        vals = _sample_slice(nodes, prev, full, rng)
        modes_seq.append(modes)
        values_seq.append(vals)
        obs_seq.append(Evidence({}, {o: vals[o] for o in net.observed}))
        prev = vals
    return Trajectory(tuple(modes_seq), tuple(values_seq), tuple(obs_seq))


# ---- output ----------------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def tracking_rows(net: TwoSliceNet, traj: Trajectory, beliefs: Sequence[BeliefState] | None = None,
                  gaussians: Sequence[GaussianDist] | None = None) -> tuple[list[str], list[list[str]]]:
    """Header and rows of the per-step tracking table.

    Pass ``beliefs`` for a tracker or ``gaussians`` for the omniscient filter.
    """
    cont = net.continuous_interface
    header = ["step"]
    for v in cont:
        header += [f"{v}_true", f"{v}_mean", f"{v}_var"]
    header += ["top_mode", "top_mode_prob", "discarded_mass"]
    rows = []
    n = len(beliefs) if beliefs is not None else len(gaussians)
    for t in range(n):
        if beliefs is not None:
            b = beliefs[t]
            g = b.collapsed()
            modes, p = b.top_mode()
            top = ";".join(f"{k}={v}" for k, v in zip(b.discrete, modes))
            disc = b.discarded
        else:
            g = gaussians[t]
            top = ";".join(f"{k}={v}" for k, v in traj.modes[t].items())
            p, disc = 1.0, 0.0
        row = [str(t)]
        for v in cont:
            i = g.scope.index(v)
            row += [_fmt(traj.values[t][v]), _fmt(g.mean[i]), _fmt(g.cov[i, i])]
        row += [top, _fmt(p), _fmt(disc)]
        rows.append(row)
    return header, rows


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
