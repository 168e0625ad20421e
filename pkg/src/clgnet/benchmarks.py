"""Benchmark network generators.

* Subset-sum reduction networks: a chain of continuous accumulators switched
  by binary selectors (``gen_theorem1``), and the variant in which every
  continuous node has at most one discrete ancestor (``gen_theorem2``).
* A water-tank fault-diagnosis model as a two-slice temporal network
  (``gen_tanks``). Its numbers are invented defaults, not published values.
* Random CLG / discrete networks used by the test suite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dbn import PREV, Scenario, ScenarioEvent, TwoSliceNet
from .errors import InputError, StructureError
from .model import Evidence, Network, continuous_node, discrete_node, topological_order

BIN = ("0", "1")


# ---- subset-sum reductions ------------------------------------------------------


@dataclass(frozen=True)
class SubsetSumInstance:
    s: tuple[int, ...]
    L: int
    C: float = 2.0
    eps: float | None = None          # defaults to sigma in the one-ancestor variant
    a_prior0: float = 0.5             # P(A_i = 0)
    b_prior0: float = 0.5             # P(B = 0)

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(int(v) for v in self.s))
        if not self.s:
            raise InputError("need at least one element")
        if any(v < 0 for v in self.s):
            raise InputError("elements must be nonnegative")
        if self.L <= 0:
            raise InputError("L must be positive")
        if self.C < 2:
            raise InputError("C must be at least 2")
        if not (0 < self.a_prior0 < 1 and 0 < self.b_prior0 < 1):
            raise InputError("priors must lie strictly between 0 and 1")

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def sigma2(self) -> float:
        return 1.0 / (2.0 * self.C * self.n * (self.n + 1))

    @property
    def M(self) -> int:
        return sum(self.s)

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.sigma2) if self.eps is None else float(self.eps)

    @property
    def sigma1_2(self) -> float:
        return self.epsilon / (self.n * self.M)

    @property
    def sigma2_2(self) -> float:
        return self.sigma2 * (1.0 + self.sigma2 / self.sigma1_2)


def subset_sum_exists(s, L) -> bool:
    """Brute-force subset search (exact oracle)."""
    reach = {0}
    for v in s:
        reach |= {r + v for r in reach}
    return L in reach


def _selectors(inst: SubsetSumInstance):
    a = [discrete_node(f"A_{i}", BIN, (), [[inst.a_prior0, 1 - inst.a_prior0]]) for i in range(1, inst.n + 1)]
    b = discrete_node("B", BIN, (), [[inst.b_prior0, 1 - inst.b_prior0]])
    return a, b


def _y_node(inst: SubsetSumInstance, parent: str):
    return continuous_node("Y", ("B",), (parent,), {
        ("0",): (inst.L - math.sqrt(2 * inst.n), (0.0,), 1.0),
        ("1",): (0.0, (1.0,), inst.sigma2)})


def gen_theorem1(inst: SubsetSumInstance) -> Network:
    """Selector chain: X_i = X_{i-1} + a_i s_i + noise, Y reads X_n when B = 1."""
    a, b = _selectors(inst)
    v = inst.sigma2
    xs = [continuous_node("X_1", ("A_1",), (), {("0",): (0.0, (), v), ("1",): (float(inst.s[0]), (), v)})]
    for i in range(2, inst.n + 1):
        si = float(inst.s[i - 1])
        xs.append(continuous_node(f"X_{i}", (f"A_{i}",), (f"X_{i-1}",),
                                  {("0",): (0.0, (1.0,), v), ("1",): (si, (1.0,), v)}))
    return Network(tuple(a + [b] + xs + [_y_node(inst, f"X_{inst.n}")]))


def gen_theorem2(inst: SubsetSumInstance) -> Network:
    """Variant with one discrete ancestor per continuous node.

    X_0 ~ N(0, sigma^2), X_i ~ N(M, sigma_2^2) independently, and the
    selector enters only through the difference nodes
    Z_i ~ N(X_i - X_{i-1} - a_i s_i, sigma_1^2), observed at 0.
    """
    if inst.M == 0:
        raise InputError("degenerate instance: all elements are zero")
    a, b = _selectors(inst)
    nodes = a + [b, continuous_node("X_0", (), (), (0.0, (), inst.sigma2))]
    for i in range(1, inst.n + 1):
        nodes.append(continuous_node(f"X_{i}", (), (), (float(inst.M), (), inst.sigma2_2)))
        si = float(inst.s[i - 1])
        nodes.append(continuous_node(f"Z_{i}", (f"A_{i}",), (f"X_{i}", f"X_{i-1}"), {
            ("0",): (0.0, (1.0, -1.0), inst.sigma1_2),
            ("1",): (-si, (1.0, -1.0), inst.sigma1_2)}))
    nodes.append(_y_node(inst, f"X_{inst.n}"))
    return Network(tuple(nodes))


def theorem2_evidence(inst: SubsetSumInstance, k: int | None = None) -> dict[str, float]:
    """Z_1..Z_k = 0 (all of them by default)."""
    k = inst.n if k is None else k
    return {f"Z_{i}": 0.0 for i in range(1, k + 1)}


def random_instance(rng: np.random.Generator, n_max: int = 10, s_max: int = 20, C: float = 2.0,
                    valid: bool | None = None) -> SubsetSumInstance:
    """Random instance; ``valid`` forces L to be (or not be) a subset sum."""
    n = int(rng.integers(1, n_max + 1))
    s = [int(v) for v in rng.integers(0, s_max + 1, n)]
    total = sum(s)
    for _ in range(1000):
        if valid is True and total > 0:
            mask = rng.random(n) < 0.5
            L = int(sum(v for v, m in zip(s, mask) if m))
        else:
            L = int(rng.integers(1, max(total, 1) + 2))
        if L <= 0:
            continue
        if valid is None or subset_sum_exists(s, L) == valid:
            return SubsetSumInstance(tuple(s), L, C)
    return random_instance(rng, n_max, s_max, C, valid)


# ---- water tanks ----------------------------------------------------------------


PIPE_MODES = ("ok", "drifting", "burst")
SENSOR_MODES = ("ok", "failed")


@dataclass(frozen=True)
class TankParams:
    """Water-tank chain: tank 1 is fed, tank N drains through an outflow pipe.

    Flow through a pipe is linearized around its mode's nominal conductance
    c_m and nominal head difference inflow / c_m::

        F = c_m (P_i - P_j) + (inflow / c_m) (C - c_m)

    so conductance drift shows up in the flows. All numbers are invented.
    """
    num_tanks: int = 5
    conductance: float = 1.0
    area: float = 25.0
    dt: float = 1.0
    inflow: float = 10.0
    process_var: float = 1e-4
    measurement_var: float = 1e-2
    failed_var: float = 1.0
    initial_pressure_var: float = 1e-2
    burst_prior: float = 1e-3
    drift_prior: float = 1e-3
    sensor_prior: float = 1e-3
    burst_factor: float = 10.0
    drift_rate: float = 0.05
    variance_floor: float = 1e-6
    measured: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_tanks < 2:
            raise StructureError("need at least two tanks")
        for name in ("process_var", "measurement_var", "failed_var", "initial_pressure_var"):
            if getattr(self, name) < self.variance_floor:
                raise InputError(f"{name} is below the variance floor")
        if self.variance_floor <= 0:
            raise InputError("variance floor must be positive")
        for name in ("burst_prior", "drift_prior", "sensor_prior"):
            if not 0 < getattr(self, name) < 0.5:
                raise InputError(f"{name} must lie in (0, 0.5)")
        if self.burst_prior + self.drift_prior >= 1:
            raise InputError("pipe fault priors must sum below 1")
        if not 0 < self.drift_rate < 1:
            raise InputError("drift rate must lie in (0, 1)")
        if self.conductance <= 0 or self.burst_factor <= 0 or self.area <= 0 or self.dt <= 0:
            raise InputError("conductance, burst factor, area and dt must be positive")
        if self.measured is not None:
            object.__setattr__(self, "measured", tuple(self.measured))
            unknown = set(self.measured) - set(self.pipes)
            if unknown:
                raise StructureError(f"unknown pipes {sorted(unknown)}")

    @property
    def pipes(self) -> tuple[str, ...]:
        n = self.num_tanks
        sep = "" if n < 10 else "."
        return tuple(f"{i}{sep}{i+1}" for i in range(1, n)) + (f"{n}{sep}o",)

    def pipe_ends(self, pipe: str) -> tuple[int, int | None]:
        i = self.pipes.index(pipe) + 1
        return i, (i + 1 if i < self.num_tanks else None)

    @property
    def measured_pipes(self) -> tuple[str, ...]:
        if self.measured is not None:
            return self.measured
        if self.num_tanks == 5:
            return ("12", "23", "45", "5o")
        return self.pipes

    @property
    def gain(self) -> float:
        return self.dt / self.area

    def mode_conductance(self, mode: str) -> float:
        return self.conductance * (self.burst_factor if mode == "burst" else 1.0)

    def steady_pressures(self) -> np.ndarray:
        """Nominal steady state: every pipe carries the inflow."""
        n = self.num_tanks
        return np.array([(n - i) * self.inflow / self.conductance for i in range(n)], dtype=float)


def _pipe_row(p: TankParams) -> list[float]:
    return [1 - p.drift_prior - p.burst_prior, p.drift_prior, p.burst_prior]


def _tank_slice(p: TankParams, first: bool) -> list:
    nodes = []
    fl = p.variance_floor
    pipes = p.pipes
    for k in pipes:
        if first:
            nodes.append(discrete_node(f"M_{k}", PIPE_MODES, (), [_pipe_row(p)]))
        else:
            rows = [_pipe_row(p), [0.0, 1 - p.burst_prior, p.burst_prior], [0.0, 0.0, 1.0]]
            nodes.append(discrete_node(f"M_{k}", PIPE_MODES, (f"M_{k}{PREV}",), rows))
    for k in p.measured_pipes:
        if first:
            nodes.append(discrete_node(f"S_{k}", SENSOR_MODES, (), [[1 - p.sensor_prior, p.sensor_prior]]))
        else:
            rows = [[1 - p.sensor_prior, p.sensor_prior], [0.0, 1.0]]
            nodes.append(discrete_node(f"S_{k}", SENSOR_MODES, (f"S_{k}{PREV}",), rows))
    c0, cb = p.conductance, p.conductance * p.burst_factor
    for k in pipes:
        if first:
            clg = {("ok",): (c0, (), fl), ("drifting",): (c0, (), fl), ("burst",): (cb, (), fl)}
            nodes.append(continuous_node(f"C_{k}", (f"M_{k}",), (), clg))
        else:
            clg = {("ok",): (0.0, (1.0,), fl), ("drifting",): (0.0, (1.0 - p.drift_rate,), fl),
                   ("burst",): (cb, (0.0,), fl)}
            nodes.append(continuous_node(f"C_{k}", (f"M_{k}",), (f"C_{k}{PREV}",), clg))
    ref = "" if first else PREV
    for k in pipes:
        i, j = p.pipe_ends(k)
        cps = [f"P_{i}{ref}"] + ([f"P_{j}{ref}"] if j is not None else []) + [f"C_{k}"]
        clg = {}
        for m in PIPE_MODES:
            cm = p.mode_conductance(m)
            kappa = p.inflow / cm
            coeffs = [cm] + ([-cm] if j is not None else []) + [kappa]
            clg[(m,)] = (-kappa * cm, tuple(coeffs), fl)
        nodes.append(continuous_node(f"F_{k}", (f"M_{k}",), tuple(cps), clg))
    P_ss = p.steady_pressures()
    g = p.gain
    for i in range(1, p.num_tanks + 1):
        if first:
            nodes.append(continuous_node(f"P_{i}", (), (), (float(P_ss[i - 1]), (), p.initial_pressure_var)))
            continue
        fin = pipes[i - 2] if i > 1 else None
        fout = pipes[i - 1]
        cps = [f"P_{i}{PREV}"] + ([f"F_{fin}"] if fin else []) + [f"F_{fout}"]
        coeffs = [1.0] + ([g] if fin else []) + [-g]
        a0 = g * p.inflow if i == 1 else 0.0
        nodes.append(continuous_node(f"P_{i}", (), tuple(cps), (a0, tuple(coeffs), p.process_var)))
    for k in p.measured_pipes:
        clg = {("ok",): (0.0, (1.0,), p.measurement_var), ("failed",): (0.0, (0.0,), p.failed_var)}
        nodes.append(continuous_node(f"FM_{k}", (f"S_{k}",), (f"F_{k}",), clg))
    return nodes


def gen_tanks(params: TankParams | None = None) -> TwoSliceNet:
    """Two-slice fault-diagnosis model of a chain of tanks.

    Per slice: pipe modes M_k (ok | drifting | burst), sensor modes S_k
    (ok | failed), conductances C_k, flows F_k, pressures P_i and flow
    measurements FM_k on the measured pipes. Fault modes are sticky: a
    drifting pipe can still burst, a burst pipe and a failed sensor stay so.
    """
    p = params or TankParams()
    observed = tuple(f"FM_{k}" for k in p.measured_pipes)
    return TwoSliceNet(tuple(_tank_slice(p, True)), tuple(_tank_slice(p, False)), observed)


def paper_scenario(horizon: int = 30, seed: int | None = None) -> Scenario:
    """Drift, double sensor failure and three bursts on the five-tank chain."""
    ev = [(5, "M_23", "drifting"), (10, "S_23", "failed"), (10, "S_5o", "failed"),
          (13, "M_23", "burst"), (17, "M_45", "drifting"), (23, "M_45", "burst"), (25, "M_12", "burst")]
    return Scenario(horizon, tuple(ScenarioEvent(t, c, m) for t, c, m in ev), seed)


def fault_events(modes: tuple[str, ...], healthy: str) -> int:
    """Number of fault onsets in a sticky mode trajectory."""
    events, cur = 0, healthy
    for m in modes:
        if m != cur:
            events += 1
            cur = m
    return events


def count_low_fault_hypotheses(net: TwoSliceNet, T: int, max_faults: int = 2) -> int:
    """Count mode trajectories over T slices with at most ``max_faults`` onsets.

    Only trajectories with positive prior probability are counted.
    """
    per_comp = []
    for name in net.discrete_interface:
        node = net.node(name)
        cpt = np.asarray(node.cpt)
        init = next(n for n in net.initial if n.name == name)
        counts = np.zeros(max_faults + 1, dtype=np.int64)
        for traj in itertools.product(range(len(node.states)), repeat=T):
            p = init.cpt[0][traj[0]]
            for a, b in zip(traj, traj[1:]):
                p *= cpt[a, b]
            if p <= 0:
                continue
            e = fault_events(tuple(node.states[s] for s in traj), node.states[0])
            if e <= max_faults:
                counts[e] += 1
        per_comp.append(counts)
    total = np.zeros(max_faults + 1, dtype=np.int64)
    total[0] = 1
    for c in per_comp:
        new = np.zeros_like(total)
        for a in range(max_faults + 1):
            for b in range(max_faults + 1 - a):
                new[a + b] += total[a] * c[b]
        total = new
    return int(total.sum())


# ---- random networks --------------------------------------------------------------


def random_discrete_network(rng: np.random.Generator, n: int, max_parents: int = 3,
                            card: int = 2, alpha: float = 1.0) -> Network:
    nodes = []
    for i in range(n):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        parents = [f"D{j}" for j in sorted(rng.choice(i, k, replace=False))] if k else []
        rows = card ** len(parents)
        cpt = rng.dirichlet([alpha] * card, size=rows)
        nodes.append(discrete_node(f"D{i}", [f"s{s}" for s in range(card)], parents, cpt))
    return Network(tuple(nodes))


def random_clg_network(rng: np.random.Generator, n_discrete: int, n_continuous: int,
                       max_dparents: int = 2, max_cparents: int = 2, polytree: bool = False) -> Network:
    """Random CLG network with binary discrete nodes.

    With ``polytree`` every node's parents come from distinct connected
    components, so the skeleton stays acyclic.
    """
    comp: dict[str, str] = {}

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    def pick(pool, k):
        if not pool or k == 0:
            return []
        chosen = []
        for c in rng.permutation(len(pool)):
            cand = pool[c]
            if polytree and any(find(cand) == find(o) for o in chosen):
                continue
            chosen.append(cand)
            if len(chosen) == k:
                break
        return chosen

    nodes, dnames, cnames = [], [], []
    for i in range(n_discrete):
        name = f"D{i}"
        comp[name] = name
        ps = sorted(pick(dnames, int(rng.integers(0, min(len(dnames), max_dparents) + 1))),
                    key=dnames.index)
        cpt = rng.dirichlet([2.0, 2.0], size=2 ** len(ps))
        nodes.append(discrete_node(name, BIN, ps, cpt))
        for q in ps:
            comp[find(q)] = find(name)
        dnames.append(name)
    for i in range(n_continuous):
        name = f"X{i}"
        comp[name] = name
        kd = int(rng.integers(0, min(len(dnames), max_dparents) + 1))
        kc = int(rng.integers(0, min(len(cnames), max_cparents) + 1))
        dps = pick(dnames, kd)
        cps = pick(cnames, kc)
        if polytree:
            merged = []
            for q in dps + cps:
                if all(find(q) != find(o) for o in merged):
                    merged.append(q)
            dps = [q for q in merged if q in dnames]
            cps = [q for q in merged if q in cnames]
        dps = sorted(dps, key=dnames.index)
        cps = sorted(cps, key=cnames.index)
        clg = {}
        for key in itertools.product(BIN, repeat=len(dps)):
            clg[key] = (float(rng.normal()), tuple(float(c) for c in rng.uniform(-1, 1, len(cps))),
                        float(rng.uniform(0.5, 1.5)))
        nodes.append(continuous_node(name, dps, cps, clg))
        for q in dps + cps:
            comp[find(q)] = find(name)
        cnames.append(name)
    return Network(tuple(nodes))


def sample_network(network: Network, rng: np.random.Generator) -> tuple[dict, dict]:
    """One ancestral sample: (discrete state labels, continuous values)."""
    disc, cont = {}, {}
    for name in topological_order(network):
        node = network.node(name)
        if network.is_discrete(name):
            row = network.cpt_arrays[name][tuple(network.state_index(p, disc[p]) for p in node.parents)]
            disc[name] = node.states[int(rng.choice(len(row), p=row / row.sum()))]
        else:
            e = node.clg[tuple(disc[p] for p in node.discrete_parents)]
            mean = e.intercept + sum(c * cont[p] for c, p in zip(e.coeffs, node.continuous_parents))
            cont[name] = float(mean + math.sqrt(e.variance) * rng.standard_normal())
    return disc, cont


def random_evidence(network: Network, rng: np.random.Generator, n_cont: int = 1, n_disc: int = 0,
                    exclude=()) -> Evidence:
    """Evidence drawn from the model itself, so it always has positive density."""
    disc, cont = sample_network(network, rng)
    cn = [c for c in network.continuous_names if c not in exclude]
    dn = [d for d in network.discrete_names if d not in exclude]
    ck = [cn[i] for i in sorted(rng.choice(len(cn), min(n_cont, len(cn)), replace=False))] if cn else []
    dk = [dn[i] for i in sorted(rng.choice(len(dn), min(n_disc, len(dn)), replace=False))] if dn else []
    return Evidence({k: disc[k] for k in dk}, {k: cont[k] for k in ck})
