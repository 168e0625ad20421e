"""Exact inference over the discrete part of a CLG network.

Factors and clique potentials are stored as log tables (numpy arrays with one
axis per variable, axes ordered by declaration index). The clique tree
supports sum-calibration, exact forward sampling and anytime K-best
enumeration.

K-best enumeration partitions the configuration space Lawler-style. Every
subproblem has the form "variables before position r fixed, variable r
restricted to an allowed set, the rest free". On a max-calibrated tree with a
breadth-first variable order, the best completion of such a subproblem is
found by greedy decoding clique by clique, so no re-propagation is needed.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ImpossibleEvidenceError, InputError
from .model import DiscreteNode, Network, ancestors

NEG_INF = -math.inf


@dataclass(frozen=True, eq=False)
class Factor:
    scope: tuple[str, ...]
    log_values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))
        lv = np.asarray(self.log_values, dtype=float)
        if lv.ndim != len(self.scope):
            raise InputError(f"factor over {self.scope} needs a {len(self.scope)}-d table")
        object.__setattr__(self, "log_values", lv)

    @property
    def cards(self) -> tuple[int, ...]:
        return self.log_values.shape

    @property
    def table(self) -> np.ndarray:
        """Nonnegative table, flattened row-major over ``scope``."""
        return np.exp(self.log_values).reshape(-1)

    @classmethod
    def from_cpt(cls, network: Network, name: str) -> "Factor":
        node = network.node(name)
        scope = node.parents + (name,)
        with np.errstate(divide="ignore"):
            lv = np.log(network.cpt_arrays[name])
        return cls(scope, lv)


def _sorted_scope(names, key) -> tuple[str, ...]:
    return tuple(sorted(set(names), key=key.__getitem__))


def _expand(values: np.ndarray, scope: Sequence[str], target: Sequence[str]) -> np.ndarray:
    """View ``values`` (over ``scope``) broadcastable against ``target``."""
    perm = sorted(range(len(scope)), key=lambda i: target.index(scope[i]))
    arr = values.transpose(perm) if perm != list(range(len(scope))) else values
    present = {scope[i]: values.shape[i] for i in range(len(scope))}
    return arr.reshape([present.get(v, 1) for v in target])


def factor_product(factors: Sequence[Factor], key: Mapping[str, int]) -> Factor:
    scope = _sorted_scope(itertools.chain.from_iterable(f.scope for f in factors), key)
    cards = {}
    for f in factors:
        cards.update(zip(f.scope, f.cards))
    out = np.zeros([cards[v] for v in scope])
    for f in factors:
        out = out + _expand(f.log_values, f.scope, scope)
    return Factor(scope, out)


def sum_out(f: Factor, names: Sequence[str]) -> Factor:
    axes = tuple(i for i, v in enumerate(f.scope) if v in names)
    if not axes:
        return f
    keep = tuple(v for v in f.scope if v not in names)
    return Factor(keep, np.asarray(logsumexp(f.log_values, axis=axes)))


def _apply_evidence(f: Factor, evidence_idx: Mapping[str, int]) -> Factor:
    hit = [(i, evidence_idx[v]) for i, v in enumerate(f.scope) if v in evidence_idx]
    if not hit:
        return f
    lv = f.log_values.copy()
    for axis, state in hit:
        mask = np.ones(lv.shape[axis], dtype=bool)
        mask[state] = False
        index = [slice(None)] * lv.ndim
        index[axis] = mask
        lv[tuple(index)] = NEG_INF
    return Factor(f.scope, lv)


def min_fill_order(scopes: Sequence[Sequence[str]], eliminate: Sequence[str],
                   key: Mapping[str, int]) -> list[str]:
    """Greedy min-fill elimination order, ties broken by declaration index."""
    adj: dict[str, set[str]] = {}
    for s in scopes:
        for v in s:
            adj.setdefault(v, set()).update(u for u in s if u != v)
    remaining = set(eliminate)
    order = []
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining, key=key.__getitem__):
            nb = list(adj.get(v, ()))
            fill = sum(1 for a, b in itertools.combinations(nb, 2) if b not in adj[a])
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        nb = adj.pop(best, set())
        for a in nb:
            adj[a].discard(best)
            adj[a].update(u for u in nb if u != a)
        remaining.discard(best)
        order.append(best)
    return order


def evidence_indices(network: Network, evidence: Mapping[str, object] | None) -> dict[str, int]:
    return {k: network.state_index(k, v) for k, v in (evidence or {}).items()}


def restrict_to(network: Network, keep, evidence: Mapping[str, object] | None = None) -> list[Factor]:
    """Factors over ``keep`` whose normalized product is P(keep | evidence).

    Discrete nodes that are neither kept, observed, nor ancestors of either are
    barren and dropped before elimination. Evidence variables inside ``keep``
    stay in scope with their other states zeroed.
    """
    keep = set(keep)
    for v in keep:
        if not network.is_discrete(v):
            raise InputError(f"{v!r} is not a discrete node")
    ev = evidence_indices(network, evidence)
    relevant = [n for n in network.discrete_names if n in ancestors(network, keep | set(ev))]
    factors = [_apply_evidence(Factor.from_cpt(network, n), ev) for n in relevant]
    key = network.index
    order = min_fill_order([f.scope for f in factors], [v for v in relevant if v not in keep], key)
    for v in order:
        touching = [f for f in factors if v in f.scope]
        rest = [f for f in factors if v not in f.scope]
        factors = rest + [sum_out(factor_product(touching, key), [v])]
    for f in factors:
        if np.all(f.log_values == NEG_INF):
            raise ImpossibleEvidenceError("evidence has zero probability")
    return factors


# ---- clique tree ------------------------------------------------------------


@dataclass(eq=False)
class CliqueTree:
    variables: tuple[str, ...]               # declaration order
    cards: dict[str, int]
    cliques: list[tuple[str, ...]]
    potentials: list[np.ndarray]
    edges: list[tuple[int, int]]
    labels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def n_entries(self) -> int:
        """Total number of table entries, |Λ|."""
        return int(sum(p.size for p in self.potentials))

    @property
    def n_cliques(self) -> int:
        return len(self.cliques)

    def stats(self) -> dict:
        return {"entries": self.n_entries, "cliques": self.n_cliques, "variables": len(self.variables)}


def projected_tree_entries(scopes: Sequence[Sequence[str]], cards: Mapping[str, int],
                           key: Mapping[str, int]) -> int:
    """|Λ| of the tree ``build_clique_tree`` would produce, from scopes only."""
    cliques = _triangulate(scopes, key)
    return int(sum(np.prod([cards[v] for v in c]) for c in cliques))


def _triangulate(scopes, key) -> list[tuple[str, ...]]:
    variables = _sorted_scope(itertools.chain.from_iterable(scopes), key)
    adj: dict[str, set[str]] = {v: set() for v in variables}
    for s in scopes:
        for v in s:
            adj[v].update(u for u in s if u != v)
    order = min_fill_order([tuple(s) for s in scopes] + [(v,) for v in variables], variables, key)
    cliques: list[frozenset] = []
    for v in order:
        c = frozenset(adj[v] | {v})
        for a in adj[v]:
            adj[a].discard(v)
            adj[a].update(u for u in adj[v] if u != a)
        del adj[v]
        if not any(c <= other for other in cliques):
            cliques = [o for o in cliques if not o <= c] + [c]
    return [_sorted_scope(c, key) for c in cliques]


def build_clique_tree(factors: Sequence[Factor], network: Network | None = None,
                      variables: Sequence[str] = ()) -> CliqueTree:
    """Junction tree over the factor scopes (a single tree; components are
    joined through empty separators)."""
    seen = list(dict.fromkeys(itertools.chain(variables, *(f.scope for f in factors))))
    key = network.index if network is not None else {v: i for i, v in enumerate(seen)}
    cards: dict[str, int] = {}
    for f in factors:
        cards.update(zip(f.scope, f.cards))
    if network is not None:
        for v in variables:
            cards.setdefault(v, network.cardinality(v))
    scopes = [f.scope for f in factors if f.scope] + [(v,) for v in variables]
    cliques = _triangulate(scopes, key) if seen else []
    if not cliques:
        cliques = [()]
    # maximum-weight spanning tree over separator sizes, deterministic
    pairs = sorted(((len(set(a) & set(b)), i, j) for (i, a), (j, b)
                    in itertools.combinations(enumerate(cliques), 2)),
                   key=lambda t: (-t[0], t[1], t[2]))
    root = list(range(len(cliques)))

    def find(x):
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    edges = []
    for _, i, j in pairs:
        a, b = find(i), find(j)
        if a != b:
            root[a] = b
            edges.append((i, j))
    pots = [np.zeros([cards[v] for v in c]) for c in cliques]
    for f in factors:
        target = next((k for k, c in enumerate(cliques) if set(f.scope) <= set(c)), None)
        if target is None:
            raise InputError(f"no clique covers factor scope {f.scope}")
        pots[target] = pots[target] + _expand(f.log_values, f.scope, cliques[target])
    labels = {}
    if network is not None:
        labels = {v: network.node(v).states for v in seen}
    return CliqueTree(tuple(sorted(seen, key=key.__getitem__)), cards, cliques, pots, edges, labels)


def _sep_expand(values, sep, clique):
    return values.reshape([values.shape[sep.index(v)] if v in sep else 1 for v in clique])


class CalibratedTree:
    """Sum-calibrated clique tree: normalized clique and separator log-marginals."""

    def __init__(self, tree: CliqueTree, evidence_idx: Mapping[str, int] | None = None):
        self.tree = tree
        self.evidence = dict(evidence_idx or {})
        self.variables = tree.variables
        self.var_pos = {v: i for i, v in enumerate(self.variables)}
        pots = []
        for c, p in zip(tree.cliques, tree.potentials):
            f = _apply_evidence(Factor(c, p), {k: v for k, v in self.evidence.items() if k in c})
            pots.append(f.log_values)
        self._pots = pots
        n = len(tree.cliques)
        nbrs = [[] for _ in range(n)]
        for i, j in tree.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.bfs, self.parent = [0], {0: None}
        for c in self.bfs:
            for d in sorted(nbrs[c]):
                if d not in self.parent:
                    self.parent[d] = c
                    self.bfs.append(d)
        self.children = {c: [d for d in self.bfs if self.parent.get(d) == c] for c in self.bfs}
        self.sepset = {c: tuple(v for v in tree.cliques[c] if v in tree.cliques[self.parent[c]])
                       for c in self.bfs[1:]}
        self.sepset[0] = ()
        self.beliefs, self.sep_beliefs, self.log_z = self._propagate(logsumexp)
        if self.log_z == NEG_INF or np.isnan(self.log_z):
            raise ImpossibleEvidenceError("evidence has zero probability")
        self.beliefs = [b - self.log_z for b in self.beliefs]
        self.sep_beliefs = {c: s - self.log_z for c, s in self.sep_beliefs.items()}
        self._clique_pos = [np.array([self.var_pos[v] for v in c], dtype=int) for c in tree.cliques]
        self._max = None

    def _propagate(self, reduce):
        cl = self.tree.cliques
        up, down = {}, {}

        def project(arr, c, sep):
            axes = tuple(i for i, v in enumerate(cl[c]) if v not in sep)
            if not axes:
                return arr
            with np.errstate(invalid="ignore"):
                return np.asarray(reduce(arr, axis=axes))

        for c in reversed(self.bfs[1:]):
            arr = self._pots[c]
            for d in self.children[c]:
                arr = arr + _sep_expand(up[d], self.sepset[d], cl[c])
            up[c] = project(arr, c, self.sepset[c])
        for c in self.bfs:
            for d in self.children[c]:
                arr = self._pots[c]
                if c != 0:
                    arr = arr + _sep_expand(down[c], self.sepset[c], cl[c])
                for e in self.children[c]:
                    if e != d:
                        arr = arr + _sep_expand(up[e], self.sepset[e], cl[c])
                down[d] = project(arr, c, self.sepset[d])
        beliefs = []
        for c in range(len(cl)):
            arr = self._pots[c]
            if c != 0:
                arr = arr + _sep_expand(down[c], self.sepset[c], cl[c])
            for d in self.children[c]:
                arr = arr + _sep_expand(up[d], self.sepset[d], cl[c])
            beliefs.append(arr)
        seps = {c: up[c] + down[c] for c in self.bfs[1:]}
        root = beliefs[0]
        log_z = float(reduce(root.reshape(-1))) if root.size else float(root)
        return beliefs, seps, log_z

    # ---- queries --------------------------------------------------------

    def encode(self, config: Mapping[str, object]) -> np.ndarray:
        missing = [v for v in self.variables if v not in config]
        if missing:
            raise InputError(f"configuration does not assign {missing}")
        labels = self.tree.labels
        out = np.empty(len(self.variables), dtype=int)
        for i, v in enumerate(self.variables):
            s = config[v]
            if isinstance(s, (int, np.integer)):
                out[i] = int(s)
            elif v in labels:
                out[i] = labels[v].index(s)
            else:
                raise InputError(f"cannot interpret state {s!r} of {v!r}")
        return out

    def log_prob_indices(self, x: np.ndarray) -> np.ndarray:
        """log P(x | evidence) for rows of state indices (``variables`` order)."""
        x = np.atleast_2d(np.asarray(x, dtype=int))
        total = np.zeros(x.shape[0])
        for c, pos in enumerate(self._clique_pos):
            b = self.beliefs[c]
            if pos.size:
                total += b[tuple(x[:, pos].T)]
            else:
                total += float(b)
        for c in self.bfs[1:]:
            sep = self.sepset[c]
            if sep:
                idx = tuple(x[:, [self.var_pos[v] for v in sep]].T)
                with np.errstate(invalid="ignore"):
                    total -= self.sep_beliefs[c][idx]
            else:
                total -= float(self.sep_beliefs[c])
        total[np.isnan(total)] = NEG_INF
        return total

    def marginal(self, name: str) -> np.ndarray:
        c = next(k for k, cl in enumerate(self.tree.cliques) if name in cl)
        b = self.beliefs[c]
        axes = tuple(i for i, v in enumerate(self.tree.cliques[c]) if v != name)
        return np.exp(logsumexp(b, axis=axes)) if axes else np.exp(b)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` exact samples as rows of state indices in ``variables`` order."""
        out = np.zeros((n, len(self.variables)), dtype=int)
        cl = self.tree.cliques
        for c in self.bfs:
            sep = self.sepset[c]
            res = [v for v in cl[c] if v not in sep]
            if not res:
                continue
            b = self.beliefs[c]
            perm = [cl[c].index(v) for v in sep] + [cl[c].index(v) for v in res]
            b = b.transpose(perm)
            sep_cards = b.shape[:len(sep)]
            table = b.reshape(int(np.prod(sep_cards)) if sep else 1, -1)
            with np.errstate(invalid="ignore"):
                cond = np.exp(table - logsumexp(table, axis=1, keepdims=True))
            cond = np.nan_to_num(cond)
            cdf = np.cumsum(cond, axis=1)
            if sep:
                rows = np.ravel_multi_index(tuple(out[:, [self.var_pos[v] for v in sep]].T), sep_cards)
            else:
                rows = np.zeros(n, dtype=int)
            u = rng.random(n) * cdf[rows, -1]
            pick = (cdf[rows] <= u[:, None]).sum(axis=1)
            pick = np.minimum(pick, table.shape[1] - 1)
            vals = np.unravel_index(pick, b.shape[len(sep):])
            for v, col in zip(res, vals):
                out[:, self.var_pos[v]] = col
        return out

    # ---- K-best ---------------------------------------------------------

    def _max_tables(self):
        if self._max is not None:
            return self._max
        beliefs, seps, _ = self._propagate(np.max)
        cl = self.tree.cliques
        order, home, tables = [], [], []
        for k, c in enumerate(self.bfs):
            sep = self.sepset[c]
            res = [v for v in cl[c] if v not in sep]
            perm = [cl[c].index(v) for v in sep] + [cl[c].index(v) for v in res]
            b = beliefs[c].transpose(perm)
            s = seps[c] if c != 0 else np.zeros(())
            s = s.reshape(s.shape + (1,) * len(res))
            with np.errstate(invalid="ignore"):
                cond = b - s
            cond[np.isnan(cond)] = NEG_INF
            sep_cards = b.shape[:len(sep)]
            cond = cond.reshape((int(np.prod(sep_cards)) if sep else 1,) + b.shape[len(sep):])
            tables.append((np.array([self.var_pos[v] for v in sep], dtype=int), sep_cards,
                           [self.var_pos[v] for v in res], len(order), cond))
            order.extend(self.var_pos[v] for v in res)
            home.extend([k] * len(res))
        self._max = (order, home, tables)
        return self._max

    def _decode(self, start: int, x: np.ndarray, r: int, allowed: np.ndarray | None):
        """Greedy best completion from BFS clique ``start``; fills ``x`` in place.

        Variables at order positions < r are fixed; position r is restricted to
        ``allowed``. Returns per-clique contributions from ``start`` on.
        """
        order, home, tables = self._max
        contrib = []
        for k in range(start, len(tables)):
            sep_pos, sep_cards, res_pos, first, cond = tables[k]
            row = int(np.ravel_multi_index(tuple(x[sep_pos]), sep_cards)) if sep_pos.size else 0
            sub = cond[row]
            if not res_pos:
                contrib.append(float(sub))
                continue
            if k == start and allowed is not None:
                nfix = r - first
                fixed = tuple(x[order[first + i]] for i in range(nfix))
                sub = sub[fixed]
                sub = np.where(allowed.reshape((-1,) + (1,) * (sub.ndim - 1)), sub, NEG_INF)
                flat = int(np.argmax(sub))
                val = sub.reshape(-1)[flat]
                picks = fixed + np.unravel_index(flat, sub.shape)
            else:
                flat = int(np.argmax(sub))
                val = sub.reshape(-1)[flat]
                picks = np.unravel_index(flat, sub.shape)
            if val == NEG_INF:
                return None
            for p, s in zip(res_pos, picks):
                x[p] = s
            contrib.append(float(val))
        return contrib

    def kbest_indices(self) -> Iterator[tuple[np.ndarray, float]]:
        """Configurations (state indices, ``variables`` order) with log P(x|d),
        in nonincreasing probability; ties in lexicographic order among the
        current frontier."""
        order, home, tables = self._max_tables()
        n = len(order)
        cards = np.array([self.tree.cards[v] for v in self.variables])
        heap = []
        counter = itertools.count()

        def push(x, r, allowed, prefix_contrib):
            start = home[r] if n else 0
            contrib = self._decode(start, x, r, allowed)
            if contrib is None:
                return
            contrib = prefix_contrib[:start] + contrib
            value = math.fsum(contrib)
            heapq.heappush(heap, (-value, tuple(x), next(counter), r, allowed, contrib))

        if n == 0:
            yield np.zeros(0, dtype=int), 0.0
            return
        x0 = np.zeros(len(self.variables), dtype=int)
        push(x0, 0, np.ones(cards[order[0]], dtype=bool), [])
        while heap:
            negv, xt, _, r, allowed, contrib = heapq.heappop(heap)
            x = np.array(xt, dtype=int)
            yield x, -negv - 0.0 + self._log_z_offset()
            rest = allowed.copy()
            rest[x[order[r]]] = False
            if rest.any():
                push(x.copy(), r, rest, contrib)
            for s in range(r + 1, n):
                mask = np.ones(cards[order[s]], dtype=bool)
                mask[x[order[s]]] = False
                if mask.any():
                    push(x.copy(), s, mask, contrib)

    def _log_z_offset(self) -> float:
        # max-product beliefs are built from unnormalized potentials
        return -self.log_z


def calibrate(tree: CliqueTree, evidence: Mapping[str, object] | None = None) -> CalibratedTree:
    labels = tree.labels
    ev = {}
    for k, v in (evidence or {}).items():
        if k not in tree.cards:
            continue
        ev[k] = int(v) if isinstance(v, (int, np.integer)) else labels[k].index(v)
    return CalibratedTree(tree, ev)


@dataclass(frozen=True)
class Configuration:
    assignment: dict
    probability: float


def _to_config(tree: CalibratedTree, x, logp) -> Configuration:
    labels = tree.tree.labels
    assign = {v: (labels[v][int(s)] if v in labels else int(s)) for v, s in zip(tree.variables, x)}
    return Configuration(assign, float(math.exp(logp)))


def prob_of(tree: CalibratedTree, config: Mapping[str, object]) -> float:
    """Exact P(config | evidence); ``config`` must assign every tree variable."""
    return float(np.exp(tree.log_prob_indices(tree.encode(config))[0]))


def sample_configuration(tree: CalibratedTree, rng: np.random.Generator) -> Configuration:
    x = tree.sample_indices(1, rng)[0]
    return _to_config(tree, x, tree.log_prob_indices(x)[0])


def k_best(tree: CalibratedTree, K: int | None = None) -> Iterator[Configuration]:
    """Anytime stream of the most probable configurations, best first."""
    if K is not None and K < 1:
        raise InputError("K must be at least 1")
    for i, (x, logp) in enumerate(tree.kbest_indices()):
        if K is not None and i >= K:
            return
        yield _to_config(tree, x, logp)


def brute_force_joint(network: Network, evidence: Mapping[str, object] | None = None):
    """Full-joint enumeration over the discrete nodes (testing oracle).

    Returns (names, configs as index rows, normalized probabilities).
    """
    names = network.discrete_names
    ev = evidence_indices(network, evidence)
    cards = [network.cardinality(n) for n in names]
    configs = np.array(list(itertools.product(*map(range, cards))), dtype=int).reshape(-1, len(names))
    logp = np.zeros(len(configs))
    pos = {n: i for i, n in enumerate(names)}
    for n in names:
        node: DiscreteNode = network.node(n)
        cpt = network.cpt_arrays[n]
        idx = tuple(configs[:, pos[p]] for p in node.parents) + (configs[:, pos[n]],)
        with np.errstate(divide="ignore"):
            logp += np.log(cpt[idx])
    for n, s in ev.items():
        logp[configs[:, pos[n]] != s] = NEG_INF
    total = logsumexp(logp)
    if total == NEG_INF:
        raise ImpossibleEvidenceError("evidence has zero probability")
    return names, configs, np.exp(logp - total)
