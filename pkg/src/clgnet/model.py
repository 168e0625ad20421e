"""CLG Bayesian network data model, validation and JSON I/O.

A network is an ordered tuple of nodes. Discrete nodes carry a CPT whose rows
are indexed row-major over the parent states (last parent varies fastest).
Continuous nodes carry one linear-Gaussian entry per discrete-parent
assignment::

    X | y, d  ~  Normal(intercept_d + coeffs_d . y, variance_d)

Networks are immutable; derived lookup tables are cached on first use.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import InputError, NetworkParseError, StructureError

CPT_TOL = 1e-9


@dataclass(frozen=True)
class ClgEntry:
    intercept: float
    coeffs: tuple[float, ...]
    variance: float


@dataclass(frozen=True)
class DiscreteNode:
    name: str
    states: tuple[str, ...]
    parents: tuple[str, ...] = ()
    cpt: tuple[tuple[float, ...], ...] = ()

    kind = "discrete"


@dataclass(frozen=True)
class ContinuousNode:
    name: str
    discrete_parents: tuple[str, ...] = ()
    continuous_parents: tuple[str, ...] = ()
    # keyed by tuples of discrete-parent state labels
    clg: Mapping[tuple[str, ...], ClgEntry] = field(default_factory=dict)

    kind = "continuous"

    @property
    def parents(self) -> tuple[str, ...]:
        return self.discrete_parents + self.continuous_parents


Node = Union[DiscreteNode, ContinuousNode]


def discrete_node(name, states, parents=(), cpt=()) -> DiscreteNode:
    """Convenience constructor accepting lists/arrays."""
    rows = tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(cpt, dtype=float)))
    return DiscreteNode(str(name), tuple(map(str, states)), tuple(parents), rows)


def continuous_node(name, discrete_parents=(), continuous_parents=(), clg=None) -> ContinuousNode:
    """Convenience constructor.

    ``clg`` maps assignment tuples (or a single state label for one parent) to
    ``(intercept, coeffs, variance)`` triples; with no discrete parents a single
    triple may be passed directly.
    """
    if clg is None:
        raise InputError(f"continuous node {name!r} needs CLG parameters")
    if not isinstance(clg, Mapping):
        clg = {(): clg}
    entries = {}
    for key, value in clg.items():
        if isinstance(key, str):
            key = (key,)
        if isinstance(value, ClgEntry):
            entries[tuple(key)] = value
            continue
        a0, coeffs, var = value
        entries[tuple(key)] = ClgEntry(float(a0), tuple(float(c) for c in coeffs), float(var))
    return ContinuousNode(str(name), tuple(discrete_parents), tuple(continuous_parents), entries)


@dataclass(frozen=True)
class Evidence:
    discrete: Mapping[str, str] = field(default_factory=dict)
    continuous: Mapping[str, float] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.discrete) or bool(self.continuous)

    def merged(self, other: "Evidence") -> "Evidence":
        return Evidence({**self.discrete, **other.discrete}, {**self.continuous, **other.continuous})


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise StructureError(f"duplicate node names: {dup}")

    # ---- lookups -------------------------------------------------------

    @cached_property
    def _by_name(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    @cached_property
    def index(self) -> dict[str, int]:
        """Declaration index of each node."""
        return {n.name: i for i, n in enumerate(self.nodes)}

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def node(self, name: str) -> Node:
        try:
            return self._by_name[name]
        except KeyError:
            raise InputError(f"unknown node {name!r}") from None

    def is_discrete(self, name: str) -> bool:
        return isinstance(self.node(name), DiscreteNode)

    @cached_property
    def discrete_names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if isinstance(n, DiscreteNode))

    @cached_property
    def continuous_names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if isinstance(n, ContinuousNode))

    def parents(self, name: str) -> tuple[str, ...]:
        return self.node(name).parents

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {n.name: [] for n in self.nodes}
        for n in self.nodes:
            for p in n.parents:
                if p in out:
                    out[p].append(n.name)
        return {k: tuple(v) for k, v in out.items()}

    def cardinality(self, name: str) -> int:
        return len(self.node(name).states)

    @cached_property
    def _state_maps(self) -> dict[str, dict[str, int]]:
        return {n.name: {s: i for i, s in enumerate(n.states)}
                for n in self.nodes if isinstance(n, DiscreteNode)}

    def state_index(self, name: str, state) -> int:
        """Dense index of ``state`` (label or int) for discrete node ``name``."""
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if not 0 <= state < self.cardinality(name):
                raise InputError(f"state index {state} out of range for {name!r}")
            return int(state)
        try:
            return self._state_maps[name][state]
        except KeyError:
            raise InputError(f"invalid state {state!r} for node {name!r}") from None

    def parent_row(self, parents: Sequence[str], indices: Sequence[int]) -> int:
        """Row-major row number for a parent assignment given as state indices."""
        row = 0
        for p, i in zip(parents, indices):
            row = row * self.cardinality(p) + int(i)
        return row

    # ---- cached numeric tables (require a valid network) --------------

    @cached_property
    def cpt_arrays(self) -> dict[str, np.ndarray]:
        """CPT of each discrete node shaped ``parent cards + (own card,)``."""
        out = {}
        for n in self.nodes:
            if isinstance(n, DiscreteNode):
                shape = tuple(self.cardinality(p) for p in n.parents) + (len(n.states),)
                out[n.name] = np.asarray(n.cpt, dtype=float).reshape(shape)
        return out

    @cached_property
    def clg_arrays(self) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per continuous node: (intercepts[r], coeffs[r, k], variances[r]) by row-major row."""
        out = {}
        for n in self.nodes:
            if not isinstance(n, ContinuousNode):
                continue
            doms = [self.node(p).states for p in n.discrete_parents]
            rows = list(itertools.product(*doms))
            k = len(n.continuous_parents)
            a0 = np.empty(len(rows))
            a = np.empty((len(rows), k))
            v = np.empty(len(rows))
            for r, key in enumerate(rows):
                e = n.clg[key]
                a0[r], a[r], v[r] = e.intercept, e.coeffs, e.variance
            out[n.name] = (a0, a, v)
        return out

    def topological_order(self) -> tuple[str, ...]:
        return topological_order(self)

    @cached_property
    def _topo(self) -> tuple[str, ...]:
        order = []
        indeg = {n.name: 0 for n in self.nodes}
        for n in self.nodes:
            for p in n.parents:
                if p in indeg:
                    indeg[n.name] += 1
        ready = [self.index[name] for name, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        while ready:
            i = heapq.heappop(ready)
            name = self.nodes[i].name
            order.append(name)
            for c in self.children[name]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, self.index[c])
        if len(order) != len(self.nodes):
            stuck = sorted(set(indeg) - set(order), key=self.index.get)
            raise StructureError(f"cycle detected among {stuck}")
        return tuple(order)


# ---- operations -----------------------------------------------------------


def topological_order(network: Network) -> tuple[str, ...]:
    """Parents before children; ties broken by declaration order."""
    return network._topo


def direct_discrete_parents(network: Network) -> frozenset[str]:
    """Discrete nodes with at least one continuous child."""
    out = set()
    for n in network.nodes:
        if isinstance(n, ContinuousNode):
            out.update(p for p in n.discrete_parents if p in network and network.is_discrete(p))
    return frozenset(out)


def validate(network: Network) -> ValidationReport:
    """Collect every structural and parametric violation; never raises."""
    v: list[str] = []
    names = {n.name for n in network.nodes}
    for n in network.nodes:
        if not n.name:
            v.append("node with empty name")
        for p in n.parents:
            if p not in names:
                v.append(f"{n.name}: dangling reference to parent {p!r}")
        if isinstance(n, DiscreteNode):
            if len(n.states) < 2:
                v.append(f"{n.name}: needs at least 2 states")
            if len(set(n.states)) != len(n.states):
                v.append(f"{n.name}: duplicate state labels")
            bad_parent = False
            for p in n.parents:
                if p in names and not network.is_discrete(p):
                    v.append(f"{n.name}: illegal parent kind (continuous parent {p!r} of a discrete node)")
                    bad_parent = True
            if bad_parent or any(p not in names for p in n.parents):
                continue
            n_rows = int(np.prod([network.cardinality(p) for p in n.parents]))
            if len(n.cpt) != n_rows:
                v.append(f"{n.name}: CPT has {len(n.cpt)} rows, expected {n_rows}")
            for r, row in enumerate(n.cpt):
                if len(row) != len(n.states):
                    v.append(f"{n.name}: CPT row {r} has {len(row)} entries, expected {len(n.states)}")
                    continue
                if any(not np.isfinite(x) or x < 0 for x in row):
                    v.append(f"{n.name}: CPT row {r} has a negative or non-finite entry")
                total = float(sum(row))
                if abs(total - 1.0) > CPT_TOL:
                    v.append(f"{n.name}: CPT row {r} sums to {total:.12g}")
        else:
            for p in n.discrete_parents:
                if p in names and not network.is_discrete(p):
                    v.append(f"{n.name}: {p!r} listed as discrete parent but is continuous")
            for p in n.continuous_parents:
                if p in names and network.is_discrete(p):
                    v.append(f"{n.name}: {p!r} listed as continuous parent but is discrete")
            if set(n.discrete_parents) & set(n.continuous_parents):
                v.append(f"{n.name}: node listed as both discrete and continuous parent")
            if any(p not in names or not network.is_discrete(p) for p in n.discrete_parents):
                continue
            doms = set(itertools.product(*(network.node(p).states for p in n.discrete_parents)))
            keys = set(n.clg)
            for key in sorted(doms - keys):
                v.append(f"{n.name}: missing CLG entry for assignment {list(key)}")
            for key in sorted(keys - doms, key=str):
                v.append(f"{n.name}: CLG entry for unknown assignment {list(key)}")
            k = len(n.continuous_parents)
            for key, e in n.clg.items():
                if len(e.coeffs) != k:
                    v.append(f"{n.name}{list(key)}: {len(e.coeffs)} coefficients, expected {k}")
                if not (np.isfinite(e.variance) and e.variance > 0):
                    v.append(f"{n.name}{list(key)}: nonpositive variance {e.variance!r}")
                if not np.isfinite(e.intercept) or not all(np.isfinite(e.coeffs)):
                    v.append(f"{n.name}{list(key)}: non-finite parameter")
    if not any("dangling" in x for x in v):
        try:
            network._topo
        except StructureError as exc:
            v.append(str(exc))
    return ValidationReport(tuple(v))


def check_evidence(network: Network, evidence: Evidence) -> None:
    """Raise ``InputError`` unless every evidence entry names a node of the right kind."""
    for name, state in evidence.discrete.items():
        if name not in network or not network.is_discrete(name):
            raise InputError(f"discrete evidence on non-discrete or unknown node {name!r}")
        network.state_index(name, state)
    for name, value in evidence.continuous.items():
        if name not in network or network.is_discrete(name):
            raise InputError(f"continuous evidence on non-continuous or unknown node {name!r}")
        if not np.isfinite(value):
            raise InputError(f"non-finite evidence value for {name!r}")


def is_polytree(network: Network) -> bool:
    """True when the undirected skeleton is acyclic."""
    parent = {n.name: n.name for n in network.nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for n in network.nodes:
        for p in n.parents:
            a, b = find(n.name), find(p)
            if a == b:
                return False
            parent[a] = b
    return True


def ancestors(network: Network, names) -> set[str]:
    """``names`` together with all their ancestors."""
    seen = set()
    stack = list(names)
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        stack.extend(network.parents(x))
    return seen


# ---- JSON I/O ---------------------------------------------------------------


def node_to_dict(node: Node) -> dict:
    if isinstance(node, DiscreteNode):
        return {"name": node.name, "kind": "discrete", "states": list(node.states),
                "parents": list(node.parents), "cpt": [list(r) for r in node.cpt]}
    return {"name": node.name, "kind": "continuous",
            "discrete_parents": list(node.discrete_parents),
            "continuous_parents": list(node.continuous_parents),
            "clg": [{"assignment": list(k), "intercept": e.intercept,
                     "coeffs": list(e.coeffs), "variance": e.variance}
                    for k, e in node.clg.items()]}


def _require(d: dict, key: str, where: str, line=None):
    if not isinstance(d, dict) or key not in d:
        raise NetworkParseError(f"missing field {key!r} in {where}", line=line, field=key)
    return d[key]


def _num(x, key, where, line=None) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise NetworkParseError(f"{where}: {key!r} must be a number, got {x!r}", line=line, field=key)
    return float(x)


def node_from_dict(d: dict, where: str = "node", line=None) -> Node:
    name = _require(d, "name", where, line)
    where = f"{where} {name!r}"
    kind = _require(d, "kind", where, line)
    if kind == "discrete":
        states = _require(d, "states", where, line)
        parents = d.get("parents", [])
        cpt = _require(d, "cpt", where, line)
        try:
            rows = tuple(tuple(_num(x, "cpt", where, line) for x in row) for row in cpt)
        except TypeError:
            raise NetworkParseError(f"{where}: cpt must be a list of rows", line=line, field="cpt") from None
        return DiscreteNode(str(name), tuple(map(str, states)), tuple(map(str, parents)), rows)
    if kind == "continuous":
        dps = tuple(map(str, d.get("discrete_parents", [])))
        cps = tuple(map(str, d.get("continuous_parents", [])))
        entries = {}
        for i, e in enumerate(_require(d, "clg", where, line)):
            ew = f"{where} clg[{i}]"
            key = tuple(map(str, _require(e, "assignment", ew, line)))
            a0 = _num(_require(e, "intercept", ew, line), "intercept", ew, line)
            coeffs = tuple(_num(c, "coeffs", ew, line) for c in _require(e, "coeffs", ew, line))
            var = _num(_require(e, "variance", ew, line), "variance", ew, line)
            if key in entries:
                raise NetworkParseError(f"{ew}: duplicate assignment {list(key)}", line=line, field="assignment")
            entries[key] = ClgEntry(a0, coeffs, var)
        return ContinuousNode(str(name), dps, cps, entries)
    raise NetworkParseError(f"{where}: unknown kind {kind!r}", line=line, field="kind")


def _node_lines(text: str) -> list[int]:
    """Best-effort line number of each node object, for error messages."""
    lines = []
    for i, line in enumerate(text.splitlines(), start=1):
        if '"name"' in line:
            lines.append(i)
    return lines


def loads_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"syntax error: {exc.msg}", line=exc.lineno) from None


def network_from_dict(doc: dict, text: str | None = None) -> Network:
    nodes_doc = _require(doc, "nodes", "document")
    if not isinstance(nodes_doc, list):
        raise NetworkParseError("'nodes' must be a list", field="nodes")
    lines = _node_lines(text) if text else []
    nodes = []
    for i, nd in enumerate(nodes_doc):
        line = lines[i] if i < len(lines) else None
        nodes.append(node_from_dict(nd, where=f"nodes[{i}]", line=line))
    try:
        return Network(tuple(nodes))
    except StructureError as exc:
        raise NetworkParseError(str(exc), field="name") from None


def parse_network(text: str) -> Network:
    """Parse the JSON network schema; semantic checks are left to ``validate``."""
    return network_from_dict(loads_json(text), text)


def network_to_dict(network: Network) -> dict:
    return {"nodes": [node_to_dict(n) for n in network.nodes]}


def serialize_network(network: Network) -> str:
    # json emits repr() floats, which round-trip exactly
    return json.dumps(network_to_dict(network), indent=1) + "\n"


def parse_evidence(text: str) -> Evidence:
    doc = loads_json(text)
    if not isinstance(doc, dict):
        raise NetworkParseError("evidence document must be an object")
    return evidence_from_dict(doc)


def evidence_from_dict(doc: dict) -> Evidence:
    disc = {str(k): str(v) for k, v in doc.get("discrete", {}).items()}
    cont = {str(k): _num(v, k, "evidence") for k, v in doc.get("continuous", {}).items()}
    return Evidence(disc, cont)


def evidence_to_dict(ev: Evidence) -> dict:
    return {"discrete": dict(ev.discrete), "continuous": {k: float(v) for k, v in ev.continuous.items()}}
