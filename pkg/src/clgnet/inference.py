"""Hybrid queries P(Q_disc, Q_cont | d, x) answered through discrete hypotheses.

A hypothesis is an assignment to the summation set (query discretes plus the
discrete parents of the relevant continuous nodes). Each one fixes a single
joint Gaussian over the continuous nodes; its weight is the discrete prior
P(delta | d) times the density of the continuous evidence under that Gaussian.

``HypothesisSpace`` compiles a (network, query) pair once: it builds the
discrete clique tree, the linear-Gaussian system and a cache of evaluated
hypotheses, so repeated runs (seed sweeps, anytime traces) share the work.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .discrete import (CalibratedTree, build_clique_tree, evidence_indices,
                       projected_tree_entries, restrict_to)
from .errors import (CapExceededError, DegenerateResultError, GibbsInitError, ImpossibleEvidenceError, InputError,
                     UnsupportedStructureError)
from .gaussian import (LOG_2PI, GaussianDist, GaussianMixture, WeightedGaussian, _cholesky,
                       log_normalize)
from .model import Evidence, Network, ancestors, check_evidence, is_polytree, topological_order

NEG_INF = -math.inf
EXACT_CAP = 2 ** 20
TREE_FALLBACK_ENTRIES = 10 ** 7


@dataclass(frozen=True)
class Query:
    q_discrete: tuple[str, ...] = ()
    q_continuous: tuple[str, ...] = ()
    evidence: Evidence = field(default_factory=Evidence)

    def __post_init__(self):
        object.__setattr__(self, "q_discrete", tuple(self.q_discrete))
        object.__setattr__(self, "q_continuous", tuple(self.q_continuous))


@dataclass(frozen=True, eq=False)
class Hypothesis:
    assignment: dict
    log_prior: float
    log_evidence: float
    conditioned: GaussianDist | None = None
    count: int = 1

    @property
    def log_weight(self) -> float:
        return self.log_prior + self.log_evidence


@dataclass(eq=False)
class QueryResult:
    q_discrete: tuple[str, ...]
    q_continuous: tuple[str, ...]
    probabilities: dict[tuple, float]
    gaussians: dict[tuple, GaussianDist | None]
    mixtures: dict[tuple, GaussianMixture] | None = None
    diagnostics: dict = field(default_factory=dict)

    def prob(self, **states) -> float:
        """Posterior probability that the named query variables take ``states``."""
        pos = [self.q_discrete.index(k) for k in states]
        want = tuple(states.values())
        return float(sum(p for q, p in self.probabilities.items()
                         if tuple(q[i] for i in pos) == want))

    def marginal(self, name: str) -> dict[str, float]:
        i = self.q_discrete.index(name)
        out: dict[str, float] = {}
        for q, p in self.probabilities.items():
            out[q[i]] = out.get(q[i], 0.0) + p
        return out

    def to_dict(self) -> dict:
        rows = []
        for q, p in self.probabilities.items():
            g = self.gaussians.get(q)
            entry = {"assignment": dict(zip(self.q_discrete, q)), "probability": p}
            if g is not None and g.dim:
                entry["mean"] = g.mean.tolist()
                entry["covariance"] = g.cov.tolist()
            rows.append(entry)
        return {"q_discrete": list(self.q_discrete), "q_continuous": list(self.q_continuous),
                "results": rows, "diagnostics": self.diagnostics}


# ---- compiled hypothesis space ------------------------------------------------


class HypothesisSpace:
    """Summation set, discrete tree and Gaussian system for one query."""

    def __init__(self, network: Network, query: Query, *,
                 fallback_entries: float = TREE_FALLBACK_ENTRIES):
        ev = query.evidence
        check_evidence(network, ev)
        for v in query.q_discrete:
            if v not in network or not network.is_discrete(v):
                raise InputError(f"discrete query variable {v!r} is not a discrete node")
        for v in query.q_continuous:
            if v not in network or network.is_discrete(v):
                raise InputError(f"continuous query variable {v!r} is not a continuous node")
        clash = (set(query.q_discrete) & set(ev.discrete)) | (set(query.q_continuous) & set(ev.continuous))
        if clash:
            raise InputError(f"query variables also observed: {sorted(clash)}")
        self.network = network
        self.query = query
        key = network.index

        # continuous nodes that matter: ancestors of queried or observed ones
        targets = set(query.q_continuous) | set(ev.continuous)
        anc = ancestors(network, targets)
        self.cont = tuple(n for n in topological_order(network) if n in anc and not network.is_discrete(n))
        dp = set()
        for n in self.cont:
            dp.update(network.node(n).discrete_parents)
        self.variables = tuple(sorted(dp | set(query.q_discrete), key=key.__getitem__))
        self.var_pos = {v: i for i, v in enumerate(self.variables)}
        self.cards = np.array([network.cardinality(v) for v in self.variables], dtype=int)
        self.labels = [network.node(v).states for v in self.variables]
        self.ev_idx = evidence_indices(network, ev.discrete)
        self.fixed = {self.var_pos[v]: s for v, s in self.ev_idx.items() if v in self.var_pos}
        self.q_pos = [self.var_pos[v] for v in query.q_discrete]

        # discrete tree over the summation set, or over every relevant discrete
        # node when the projected tree would be too large
        factors = restrict_to(network, set(self.variables), ev.discrete)
        cardmap = {v: network.cardinality(v) for v in network.discrete_names}
        entries = projected_tree_entries([f.scope for f in factors if f.scope]
                                         + [(v,) for v in self.variables], cardmap, key)
        self.fallback = entries > fallback_entries
        if self.fallback:
            rel = ancestors(network, set(self.variables) | set(self.ev_idx))
            full_vars = tuple(v for v in network.discrete_names if v in rel)
            factors = restrict_to(network, set(full_vars), ev.discrete)
            tree = build_clique_tree(factors, network, full_vars)
        else:
            tree = build_clique_tree(factors, network, self.variables)
        self.tree = CalibratedTree(tree, {k: v for k, v in self.ev_idx.items() if k in tree.cards})
        self._tree_cols = np.array([self.tree.var_pos[v] for v in self.variables], dtype=int)

        self._compile_gaussian()
        self._cache: dict[tuple, tuple[float, float]] = {}

    # ---- sizes and codes -----------------------------------------------

    @property
    def domain_size(self) -> int:
        """Number of summation-set assignments consistent with discrete evidence."""
        return math.prod(1 if i in self.fixed else int(c) for i, c in enumerate(self.cards))

    def assignment(self, x: Sequence[int]) -> dict:
        return {v: self.labels[i][int(s)] for i, (v, s) in enumerate(zip(self.variables, x))}

    def encode(self, assignment: Mapping[str, object]) -> tuple:
        missing = [v for v in self.variables if v not in assignment]
        if missing:
            raise InputError(f"hypothesis does not assign {missing}")
        return tuple(self.network.state_index(v, assignment[v]) for v in self.variables)

    def q_value(self, x: Sequence[int]) -> tuple:
        return tuple(self.labels[i][int(x[i])] for i in self.q_pos)

    def enumerate_all(self) -> Iterator[tuple]:
        ranges = [(self.fixed[i],) if i in self.fixed else range(int(c)) for i, c in enumerate(self.cards)]
        return itertools.product(*ranges)

    # ---- discrete prior -------------------------------------------------

    def log_priors(self, xs: np.ndarray) -> np.ndarray:
        """log P(delta | d) for rows of summation-set state indices."""
        xs = np.atleast_2d(np.asarray(xs, dtype=int)).reshape(-1, len(self.variables))
        if not self.fallback:
            return self.tree.log_prob_indices(xs[:, np.argsort(self._tree_cols)]
                                              if len(self.variables) else xs)
        return np.array([self._fallback_log_prior(x) for x in xs])

    def _fallback_log_prior(self, x) -> float:
        ev = dict(self.tree.evidence)
        ev.update({v: int(s) for v, s in zip(self.variables, x)})
        for v, s in self.tree.evidence.items():
            if ev[v] != s:
                return NEG_INF
        try:
            sub = CalibratedTree(self.tree.tree, ev)
        except ImpossibleEvidenceError:
            return NEG_INF
        return sub.log_z - self.tree.log_z

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` exact draws from P(delta | d) as rows of state indices."""
        return self.tree.sample_indices(n, rng)[:, self._tree_cols]

    def kbest(self, extra_evidence: Mapping[str, int] | None = None) -> Iterator[tuple[tuple, float]]:
        """Distinct hypotheses in nonincreasing prior order, with log P(delta | d).

        ``extra_evidence`` (state indices) restricts the stream, as used by
        per-value enumeration; reported priors stay conditioned on ``d`` only.
        """
        tree = self.tree
        if extra_evidence:
            ev = dict(self.tree.evidence)
            ev.update(extra_evidence)
            tree = CalibratedTree(self.tree.tree, ev)
        seen = set()
        for x, lp in tree.kbest_indices():
            h = tuple(int(s) for s in x[self._tree_cols])
            if self.fallback:
                if h in seen:
                    continue
                seen.add(h)
                lp = self._fallback_log_prior(h)
            elif extra_evidence:
                lp = float(self.log_priors(np.array(h))[0])
            yield h, lp

    # ---- Gaussian part --------------------------------------------------

    def _compile_gaussian(self):
        net = self.network
        ev = self.query.evidence.continuous
        cpos = {n: i for i, n in enumerate(self.cont)}
        self._nodes = []
        for n in self.cont:
            node = net.node(n)
            a0, A, v = net.clg_arrays[n]
            dpos = np.array([self.var_pos[p] for p in node.discrete_parents], dtype=int)
            radix = [net.cardinality(p) for p in node.discrete_parents]
            strides = np.array([int(np.prod(radix[i + 1:])) for i in range(len(radix))], dtype=int)
            ppos = np.array([cpos[p] for p in node.continuous_parents], dtype=int)
            self._nodes.append((dpos, strides, ppos, a0, A, v))
        self.obs_names = [n for n in self.cont if n in ev]
        self.obs_idx = np.array([cpos[n] for n in self.obs_names], dtype=int)
        self.obs_val = np.array([ev[n] for n in self.obs_names], dtype=float)

    def _system(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means (H, d) and covariance square roots (H, d, d) for hypothesis rows."""
        H, d = X.shape[0], len(self.cont)
        B = np.zeros((H, d, d))
        a0 = np.empty((H, d))
        sd = np.zeros((H, d, d))
        diag = np.arange(d)
        for j, (dpos, strides, ppos, A0, A, V) in enumerate(self._nodes):
            rows = X[:, dpos] @ strides if dpos.size else np.zeros(H, dtype=int)
            a0[:, j] = A0[rows]
            sd[:, j, j] = np.sqrt(V[rows])
            if ppos.size:
                B[:, j, ppos] = A[rows]
        IB = -B
        IB[:, diag, diag] = 1.0
        mean = np.linalg.solve(IB, a0[..., None])[..., 0]
        Lf = np.linalg.solve(IB, sd)
        return mean, Lf

    def joint(self, x: Sequence[int]) -> GaussianDist:
        """Joint Gaussian over the relevant continuous nodes under hypothesis ``x``."""
        mean, Lf = self._system(np.asarray(x, dtype=int).reshape(1, -1))
        cov = Lf[0] @ Lf[0].T
        return GaussianDist(self.cont, mean[0], 0.5 * (cov + cov.T))

    def evaluate(self, X: np.ndarray, posterior: bool = False, chunk: int = 1024):
        """Evidence log densities for hypothesis rows, optionally with the
        posterior means (H, q) and covariances (H, q, q) of the continuous
        query variables."""
        X = np.asarray(X, dtype=int).reshape(-1, len(self.variables))
        H = X.shape[0]
        nq = len(self.query.q_continuous)
        logdens = np.zeros(H)
        means = np.zeros((H, nq))
        covs = np.zeros((H, nq, nq))
        if not self.cont or H == 0:
            return (logdens, means, covs) if posterior else logdens
        o = self.obs_idx
        qpos = np.array([self.cont.index(n) for n in self.query.q_continuous], dtype=int)
        k = o.size
        for lo in range(0, H, chunk):
            hi = min(H, lo + chunk)
            mean, Lf = self._system(X[lo:hi])
            cov = Lf @ np.swapaxes(Lf, 1, 2)
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            if k == 0:
                if posterior:
                    means[lo:hi] = mean[:, qpos]
                    covs[lo:hi] = cov[:, qpos][:, :, qpos]
                continue
            Soo = cov[:, o][:, :, o]
            try:
                L = np.linalg.cholesky(Soo)
            except np.linalg.LinAlgError:
                L = np.stack([_cholesky(b, self.obs_names) for b in Soo])
            resid = self.obs_val - mean[:, o]
            z = np.linalg.solve(L, resid[..., None])[..., 0]
            logdens[lo:hi] = (-0.5 * np.einsum("hi,hi->h", z, z)
                              - np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
                              - 0.5 * k * LOG_2PI)
            if posterior and nq:
                W = np.linalg.solve(L, cov[:, o][:, :, qpos])
                means[lo:hi] = mean[:, qpos] + np.einsum("hiq,hi->hq", W, z)
                c = cov[:, qpos][:, :, qpos] - np.swapaxes(W, 1, 2) @ W
                covs[lo:hi] = 0.5 * (c + np.swapaxes(c, 1, 2))
        return (logdens, means, covs) if posterior else logdens

    def log_evidence(self, x: Sequence[int]) -> float:
        return float(self.evaluate(np.asarray(x).reshape(1, -1))[0])

    def conditioned(self, x: Sequence[int]) -> tuple[GaussianDist | None, float]:
        """Posterior over the continuous query variables and the evidence log density."""
        le, m, c = self.evaluate(np.asarray(x).reshape(1, -1), posterior=True)
        g = GaussianDist(self.query.q_continuous, m[0], c[0]) if self.query.q_continuous else None
        return g, float(le[0])

    def weight(self, x: tuple) -> tuple[float, float]:
        """Cached (log prior, log evidence) of hypothesis ``x``."""
        hit = self._cache.get(x)
        if hit is None:
            lp = float(self.log_priors(np.array(x))[0])
            le = self.log_evidence(x) if lp > NEG_INF else 0.0
            hit = (lp, le)
            self._cache[x] = hit
        return hit

    def weights(self, xs: Sequence[tuple], log_priors: Sequence[float] | None = None) -> list[tuple[float, float]]:
        """Batch version of ``weight``; priors may be supplied when already known."""
        todo = [i for i, x in enumerate(xs) if x not in self._cache]
        if todo:
            if log_priors is not None:
                lps = np.asarray(log_priors, dtype=float)[todo]
            else:
                lps = self.log_priors(np.array([xs[i] for i in todo]))
            live = [i for i, lp in zip(todo, lps) if lp > NEG_INF]
            les = dict(zip(live, self.evaluate(np.array([xs[i] for i in live])))) if live else {}
            for i, lp in zip(todo, lps):
                self._cache[xs[i]] = (float(lp), float(les.get(i, 0.0)))
        return [self._cache[x] for x in xs]

    def hypothesis(self, x: tuple, count: int = 1) -> Hypothesis:
        lp, _ = self.weight(x)
        if lp == NEG_INF:
            return Hypothesis(self.assignment(x), NEG_INF, 0.0, None, count)
        g, le = self.conditioned(x)
        return Hypothesis(self.assignment(x), lp, le, g, count)


def _space(network, query, space):
    if space is not None:
        if space.network is not network or space.query != query:
            raise InputError("supplied HypothesisSpace was compiled for a different network or query")
        return space
    return HypothesisSpace(network, query)


# ---- weighting and result assembly -------------------------------------------


def reweigh(hypotheses: Sequence[Hypothesis], scheme: str = "likelihood") -> np.ndarray:
    """Normalized weights of distinct hypotheses.

    ``likelihood``: prior times evidence density. ``counts``: sample count
    times evidence density (unbiased for sampled sets).
    """
    if not hypotheses:
        raise DegenerateResultError("no hypotheses to weigh")
    if scheme == "likelihood":
        lw = [h.log_prior + h.log_evidence if h.log_prior > NEG_INF else NEG_INF for h in hypotheses]
    elif scheme == "counts":
        lw = [math.log(h.count) + h.log_evidence if h.count > 0 and h.log_prior > NEG_INF else NEG_INF
              for h in hypotheses]
    else:
        raise InputError(f"unknown weighting scheme {scheme!r}")
    return np.exp(log_normalize(lw))


def _lse(a: np.ndarray) -> float:
    """logsumexp for small 1-d arrays without scipy's per-call overhead."""
    m = a.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + math.log(np.exp(a - m).sum()))


def _build_result(space: HypothesisSpace, xs: Sequence[tuple], counts: Sequence[int] | None,
                  scheme: str, keep_mixture: bool, diagnostics: dict,
                  all_q: bool = True) -> QueryResult:
    q = space.query
    counts = list(counts) if counts is not None else [1] * len(xs)
    if scheme not in ("likelihood", "counts"):
        raise InputError(f"unknown weighting scheme {scheme!r}")
    need_gauss = bool(q.q_continuous)
    groups: dict[tuple, list] = {}
    log_w = []
    zero_prior = 0
    for x, c in zip(xs, counts):
        lp, le = space.weight(x)
        if lp == NEG_INF:
            zero_prior += 1
            lw = NEG_INF
        elif scheme == "likelihood":
            lw = lp + le
        else:
            lw = math.log(c) + le
        log_w.append(lw)
        groups.setdefault(space.q_value(x), []).append(len(log_w) - 1)
    log_w = np.array(log_w, dtype=float)
    if log_w.size == 0 or np.all(log_w == NEG_INF):
        raise DegenerateResultError("every generated hypothesis has zero weight")
    log_total = _lse(log_w)

    if all_q and q.q_discrete:
        ranges = [(space.labels[i][space.fixed[i]],) if i in space.fixed else space.labels[i]
                  for i in space.q_pos]
        keys = list(itertools.product(*ranges))
    else:
        keys = sorted(groups, key=lambda k: [space.labels[i].index(s) for i, s in zip(space.q_pos, k)])
    probs, gauss, mixtures, not_covered = {}, {}, {} if keep_mixture else None, []
    live = np.flatnonzero(log_w > NEG_INF)
    if need_gauss and live.size:
        _, post_m, post_c = space.evaluate(np.array([xs[i] for i in live]), posterior=True)
        row_of = {int(i): r for r, i in enumerate(live)}
    for k in keys:
        members = groups.get(k, [])
        lw_k = log_w[members] if members else np.array([])
        if not members or np.all(lw_k == NEG_INF):
            probs[k] = 0.0
            gauss[k] = None
            not_covered.append(list(k))
            continue
        probs[k] = math.exp(_lse(lw_k) - log_total)
        if not need_gauss:
            gauss[k] = None
            continue
        mem = [i for i in members if log_w[i] > NEG_INF]
        rows = [row_of[i] for i in mem]
        w = np.exp(log_w[mem] - _lse(log_w[mem]))
        mu = w @ post_m[rows]
        dm = post_m[rows] - mu
        cov = np.einsum("h,hij->ij", w, post_c[rows]) + (dm * w[:, None]).T @ dm
        gauss[k] = GaussianDist(q.q_continuous, mu, 0.5 * (cov + cov.T))
        if keep_mixture:
            mixtures[k] = GaussianMixture(tuple(
                WeightedGaussian(float(log_w[i] - log_total), GaussianDist(q.q_continuous, post_m[r], post_c[r]))
                for i, r in zip(mem, rows)))
    diag = dict(diagnostics)
    diag.update({"distinct": len(xs), "zero_prior": zero_prior, "not_covered": not_covered,
                 "log_likelihood": log_total if scheme == "likelihood" else None,
                 "covered_prior_mass": math.exp(_lse(np.array([space.weight(x)[0] for x in xs])))})
    return QueryResult(q.q_discrete, q.q_continuous, probs, gauss, mixtures, diag)


def _unique(rows: np.ndarray) -> tuple[list[tuple], list[int], np.ndarray]:
    """Distinct rows in first-occurrence order with their counts."""
    if rows.shape[1] == 0:
        return [()], [rows.shape[0]], np.zeros(1, dtype=int)
    uniq, first, counts = np.unique(rows, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return [tuple(int(s) for s in uniq[i]) for i in order], counts[order].tolist(), first[order]


# ---- public operations ---------------------------------------------------------


def evaluate_hypothesis(network: Network, query: Query, delta: Mapping[str, object],
                        space: HypothesisSpace | None = None) -> Hypothesis:
    """Prior, evidence likelihood and posterior Gaussian of one hypothesis.

    An assignment impossible under the discrete evidence gets log prior -inf.
    """
    space = _space(network, query, space)
    return space.hypothesis(space.encode(delta))


def answer_exact(network: Network, query: Query, *, cap: int = EXACT_CAP,
                 keep_mixture: bool = False, space: HypothesisSpace | None = None) -> QueryResult:
    """Sum over every hypothesis."""
    space = _space(network, query, space)
    size = space.domain_size
    if size > cap:
        raise CapExceededError(f"{size} hypotheses over {len(space.variables)} variables exceed the cap of {cap}")
    xs = list(space.enumerate_all())
    if xs and len(space.variables):
        lps = space.log_priors(np.array(xs))
        space.weights(xs, lps)
    return _build_result(space, xs, None, "likelihood", keep_mixture,
                         {"algorithm": "exact", "generated": len(xs), "duplicates": 0})


def answer_enum(network: Network, query: Query, K: int, *, per_value: bool = False,
                keep_mixture: bool = False, space: HypothesisSpace | None = None) -> QueryResult:
    """The K hypotheses of highest prior probability, weighted by likelihood.

    With ``per_value`` the K most probable hypotheses are generated separately
    for every value of the discrete query variables.
    """
    if K < 1:
        raise InputError("K must be at least 1")
    space = _space(network, query, space)
    xs, lps = [], []
    if per_value and space.q_pos:
        ranges = [(space.fixed[i],) if i in space.fixed else range(int(space.cards[i])) for i in space.q_pos]
        for qv in itertools.product(*ranges):
            extra = {space.variables[i]: s for i, s in zip(space.q_pos, qv)}
            try:
                for h, lp in itertools.islice(space.kbest(extra), K):
                    xs.append(h)
                    lps.append(lp)
            except ImpossibleEvidenceError:
                continue  # value impossible under d; reported as not covered
    else:
        for h, lp in itertools.islice(space.kbest(), K):
            xs.append(h)
            lps.append(lp)
    space.weights(xs, lps)
    diag = {"algorithm": "enum", "K": K, "per_value": per_value, "generated": len(xs), "duplicates": 0}
    if len(space.query.evidence.continuous) == 1 and is_polytree(network):
        diag["residual_bound"] = _residual_from_space(space, xs)
    return _build_result(space, xs, None, "likelihood", keep_mixture, diag)


def answer_lw(network: Network, query: Query, n_samples: int, rng: np.random.Generator, *,
              scheme: str = "likelihood", keep_mixture: bool = False,
              space: HypothesisSpace | None = None) -> QueryResult:
    """Hypotheses drawn from the discrete prior P(delta | d)."""
    if n_samples < 1:
        raise InputError("n_samples must be at least 1")
    space = _space(network, query, space)
    rows = space.sample(n_samples, rng)
    xs, counts, _ = _unique(rows)
    space.weights(xs)
    diag = {"algorithm": "lw", "generated": n_samples, "duplicates": n_samples - len(xs), "scheme": scheme}
    return _build_result(space, xs, counts, scheme, keep_mixture, diag)


def gibbs_chain(space: HypothesisSpace, n_steps: int, burn_in: int, rng: np.random.Generator, *,
                random_scan: bool = False, max_init_tries: int = 1000) -> list[tuple]:
    """States visited by single-site Gibbs updates after ``burn_in`` updates.

    Each update resamples one free variable from its exact full conditional
    and contributes one state; a systematic scan visits variables in
    declaration order.
    """
    free = [i for i in range(len(space.variables)) if i not in space.fixed]
    state = None
    for _ in range(max(1, max_init_tries // 100)):
        cand = space.sample(100, rng)
        for row in cand:
            x = tuple(int(s) for s in row)
            lp, le = space.weight(x)
            if lp + le > NEG_INF:
                state = list(x)
                break
        if state is not None:
            break
    if state is None:
        raise GibbsInitError(f"no initial state with positive posterior density in {max_init_tries} prior draws")
    out = []
    if not free:
        return [tuple(state)] * max(n_steps - burn_in, 0)
    cards = space.cards
    cache = space._cache
    nfree = len(free)
    us = rng.random(n_steps)
    picks = rng.integers(0, nfree, n_steps) if random_scan else None
    for step in range(n_steps):
        i = free[picks[step]] if random_scan else free[step % nfree]
        cands = []
        for a in range(cards[i]):
            state[i] = a
            cands.append(tuple(state))
        if any(c not in cache for c in cands):
            space.weights(cands)
        lws = [lp + le if lp > NEG_INF else NEG_INF for lp, le in (cache[c] for c in cands)]
        m = max(lws)
        p = [math.exp(w - m) for w in lws]
        u = us[step] * sum(p)
        acc = 0.0
        for a, pa in enumerate(p):
            acc += pa
            if u < acc:
                break
        state[i] = a
        if step >= burn_in:
            out.append(cands[a])
    return out


def answer_gibbs(network: Network, query: Query, n_steps: int, burn_in: int, rng: np.random.Generator, *,
                 scheme: str = "likelihood", random_scan: bool = False, keep_mixture: bool = False,
                 space: HypothesisSpace | None = None) -> QueryResult:
    """Hypotheses visited by a Gibbs chain targeting P(delta | d, x)."""
    if n_steps < 1 or burn_in < 0 or burn_in >= n_steps:
        raise InputError("need n_steps >= 1 and 0 <= burn_in < n_steps")
    space = _space(network, query, space)
    visited = gibbs_chain(space, n_steps, burn_in, rng, random_scan=random_scan)
    counts: dict[tuple, int] = {}
    for x in visited:
        counts[x] = counts.get(x, 0) + 1
    xs = list(counts)
    diag = {"algorithm": "gibbs", "generated": len(visited), "duplicates": len(visited) - len(xs),
            "burn_in": burn_in, "scheme": scheme}
    return _build_result(space, xs, [counts[x] for x in xs], scheme, keep_mixture, diag)


# ---- residual mass bound --------------------------------------------------------


def min_variance(network: Network, target: str) -> float:
    """Greedy lower bound on Var(target | delta) over all discrete assignments.

    Valid for polytrees, where the continuous parents of a node are
    independent given any hypothesis.
    """
    vmin: dict[str, float] = {}
    for n in topological_order(network):
        if network.is_discrete(n):
            continue
        node = network.node(n)
        _, A, V = network.clg_arrays[n]
        pv = np.array([vmin[p] for p in node.continuous_parents])
        vmin[n] = float(np.min(V + (A ** 2) @ pv)) if pv.size else float(np.min(V))
        if n == target:
            break
    return vmin[target]


def _residual_from_space(space: HypothesisSpace, xs: Iterable[tuple]) -> dict:
    ev = space.query.evidence.continuous
    (name,) = ev
    v = min_variance(space.network, name)
    covered = [space.weight(x)[0] for x in xs]
    covered_mass = float(np.exp(logsumexp(covered))) if covered else 0.0
    prior_left = max(0.0, 1.0 - covered_mass)
    bound = prior_left / math.sqrt(2 * math.pi * v)
    gen = [lp + le for lp, le in (space.weight(x) for x in xs) if lp > NEG_INF]
    gen_mass = float(np.exp(logsumexp(gen))) if gen else 0.0
    post = bound / (gen_mass + bound) if bound > 0 else 0.0
    return {"density_bound": bound, "posterior_bound": post, "v_min": v, "prior_left": prior_left}


def residual_mass_bound(network: Network, query: Query, generated: Iterable[Mapping[str, object]],
                        space: HypothesisSpace | None = None) -> float:
    """Upper bound on sum over non-generated delta of P(delta | d) p(x | delta).

    Only defined when the network is a polytree and exactly one continuous
    variable is observed.
    """
    if not is_polytree(network):
        raise UnsupportedStructureError("residual bound requires a polytree network")
    if len(query.evidence.continuous) != 1:
        raise UnsupportedStructureError("residual bound requires exactly one continuous evidence variable")
    space = _space(network, query, space)
    xs = {space.encode(d) for d in generated}
    return _residual_from_space(space, xs)["density_bound"]


# ---- anytime traces -------------------------------------------------------------


def estimate_trace(space: HypothesisSpace, xs: Sequence[tuple], checkpoints: Sequence[int],
                   target: Mapping[str, object], scheme: str = "likelihood") -> np.ndarray:
    """Running estimate of P(target | d, x) after each checkpoint prefix of ``xs``.

    ``xs`` is a generation-order stream of hypotheses (duplicates allowed).
    Prefixes with no positive-weight hypothesis report NaN.
    """
    tpos = [(space.var_pos[k], space.network.state_index(k, s)) for k, s in target.items()]
    counts: dict[tuple, int] = {}
    tot_all = NEG_INF
    tot_hit = NEG_INF
    out = []
    cps = sorted(checkpoints)
    j = 0
    for n, x in enumerate(xs, start=1):
        lp, le = space.weight(x)
        hit = all(x[i] == s for i, s in tpos)
        if lp > NEG_INF:
            if scheme == "likelihood":
                if x not in counts:
                    w = lp + le
                    tot_all = np.logaddexp(tot_all, w)
                    if hit:
                        tot_hit = np.logaddexp(tot_hit, w)
            else:
                w = le
                tot_all = np.logaddexp(tot_all, w)
                if hit:
                    tot_hit = np.logaddexp(tot_hit, w)
        counts[x] = counts.get(x, 0) + 1
        while j < len(cps) and cps[j] == n:
            out.append(math.exp(tot_hit - tot_all) if tot_all > NEG_INF else math.nan)
            j += 1
    while j < len(cps):
        out.append(out[-1] if out else math.nan)
        j += 1
    return np.array(out)
