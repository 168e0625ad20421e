"""Moment-form multivariate Gaussians over named continuous variables.

Everything here is a pure function of immutable values. Mixture weights live
in log space throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import DegenerateResultError, InputError, NumericalError
from .model import Network, topological_order

LOG_2PI = math.log(2.0 * math.pi)
SYM_TOL = 1e-9
PSD_TOL = 1e-9
JITTER_START = 1e-12
JITTER_MAX = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianDist:
    scope: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "scope", tuple(self.scope))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if len(self.scope) != mean.size:
            raise InputError(f"scope has {len(self.scope)} names but mean has {mean.size} entries")

    @property
    def dim(self) -> int:
        return len(self.scope)

    def positions(self, names: Sequence[str]) -> list[int]:
        idx = {n: i for i, n in enumerate(self.scope)}
        try:
            return [idx[n] for n in names]
        except KeyError as exc:
            raise InputError(f"{exc.args[0]!r} not in scope {self.scope}") from None

    def variance(self, name: str) -> float:
        i = self.positions([name])[0]
        return float(self.cov[i, i])

    def check(self) -> None:
        """Raise ``NumericalError`` unless the covariance is symmetric PSD."""
        if self.dim == 0:
            return
        scale = max(1.0, float(np.abs(self.cov).max()))
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=SYM_TOL * scale):
            raise NumericalError("covariance is not symmetric")
        low = float(np.linalg.eigvalsh(self.cov).min())
        if low < -PSD_TOL * scale:
            raise NumericalError(f"covariance is not PSD (min eigenvalue {low:.3g})")

    def logpdf(self, x: Mapping[str, float] | Sequence[float]) -> float:
        if isinstance(x, Mapping):
            x = [x[n] for n in self.scope]
        _, logdens = _cholesky_condition(self.mean, self.cov, np.arange(self.dim),
                                         np.asarray(x, dtype=float), list(self.scope))
        return logdens

    def __repr__(self):
        return f"GaussianDist(scope={self.scope}, mean={self.mean.tolist()}, cov={self.cov.tolist()})"


@dataclass(frozen=True, eq=False)
class WeightedGaussian:
    log_weight: float
    dist: GaussianDist


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    components: tuple[WeightedGaussian, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if comps:
            scope = comps[0].dist.scope
            if any(c.dist.scope != scope for c in comps):
                raise InputError("mixture components must share one scope")

    @property
    def scope(self) -> tuple[str, ...]:
        return self.components[0].dist.scope if self.components else ()

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([c.log_weight for c in self.components], dtype=float)

    @property
    def log_total(self) -> float:
        lw = self.log_weights
        return float(logsumexp(lw)) if lw.size else -math.inf

    def normalized(self) -> "GaussianMixture":
        lw = log_normalize(self.log_weights)
        return GaussianMixture(tuple(WeightedGaussian(float(w), c.dist) for w, c in zip(lw, self.components)))


# ---- construction ---------------------------------------------------------


def joint_for_hypothesis(network: Network, assignment: Mapping[str, object],
                         nodes: Sequence[str] | None = None) -> GaussianDist:
    """Exact joint Gaussian over continuous nodes given discrete parent values.

    ``assignment`` maps discrete node names to state labels or indices and must
    cover every discrete parent of the requested nodes. ``nodes`` restricts the
    result to an ancestrally closed subset; the default is every continuous
    node. The scope follows topological order.
    """
    if nodes is None:
        order = [n for n in topological_order(network) if not network.is_discrete(n)]
    else:
        wanted = set(nodes)
        order = [n for n in topological_order(network) if n in wanted]
    d = len(order)
    pos = {n: i for i, n in enumerate(order)}
    mean = np.zeros(d)
    cov = np.zeros((d, d))
    arrays = network.clg_arrays
    for j, name in enumerate(order):
        node = network.node(name)
        try:
            idx = [network.state_index(p, assignment[p]) for p in node.discrete_parents]
        except KeyError as exc:
            raise InputError(f"assignment missing discrete parent {exc.args[0]!r} of {name!r}") from None
        row = network.parent_row(node.discrete_parents, idx)
        a0s, As, vs = arrays[name]
        a0, a, var = a0s[row], As[row], vs[row]
        if node.continuous_parents:
            try:
                p = [pos[q] for q in node.continuous_parents]
            except KeyError as exc:
                raise InputError(f"node set is not ancestrally closed: {exc.args[0]!r} missing") from None
            mean[j] = a0 + a @ mean[p]
            cross = a @ cov[p, :j]
            cov[j, :j] = cross
            cov[:j, j] = cross
            cov[j, j] = var + a @ cov[np.ix_(p, p)] @ a
        else:
            mean[j] = a0
            cov[j, j] = var
    return GaussianDist(tuple(order), mean, cov)


# ---- conditioning ---------------------------------------------------------


def _cholesky(block: np.ndarray, names) -> np.ndarray:
    try:
        return linalg.cholesky(block, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = max(float(np.trace(block)) / max(block.shape[0], 1), np.finfo(float).tiny)
    jitter = JITTER_START
    eye = np.eye(block.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cholesky(block + jitter * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter *= 10
    raise NumericalError(f"observed covariance block over {list(names)} is singular")


def _cholesky_condition(mean, cov, obs_idx, values, names):
    """Log density of ``values`` at ``obs_idx`` plus the Cholesky factor used."""
    block = cov[np.ix_(obs_idx, obs_idx)]
    L = _cholesky(block, names)
    resid = values - mean[obs_idx]
    z = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
    logdens = -0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * len(obs_idx) * LOG_2PI
    return L, float(logdens)


def condition(g: GaussianDist, obs: Mapping[str, float]) -> tuple[GaussianDist, float]:
    """Condition on observed values.

    Returns the conditional over the unobserved part of the scope (in scope
    order) and the log marginal density of the observations.
    """
    if not obs:
        return g, 0.0
    obs_names = [n for n in g.scope if n in obs]
    if len(obs_names) != len(obs):
        missing = sorted(set(obs) - set(g.scope))
        raise InputError(f"observed variables not in scope: {missing}")
    o = g.positions(obs_names)
    u = [i for i, n in enumerate(g.scope) if n not in obs]
    x = np.array([obs[n] for n in obs_names], dtype=float)
    L, logdens = _cholesky_condition(g.mean, g.cov, o, x, obs_names)
    if not u:
        return GaussianDist((), np.zeros(0), np.zeros((0, 0))), logdens
    cross = g.cov[np.ix_(o, u)]                      # Σ_ou
    w = linalg.solve_triangular(L, cross, lower=True, check_finite=False)
    z = linalg.solve_triangular(L, x - g.mean[o], lower=True, check_finite=False)
    mean = g.mean[u] + w.T @ z
    cov = g.cov[np.ix_(u, u)] - w.T @ w
    cov = 0.5 * (cov + cov.T)
    return GaussianDist(tuple(g.scope[i] for i in u), mean, cov), logdens


def marginalize(g: GaussianDist, keep: Sequence[str]) -> GaussianDist:
    """Sub-vector / sub-matrix in ``keep`` order."""
    keep = list(keep)
    if not keep:
        raise InputError("keep must be nonempty")
    p = g.positions(keep)
    return GaussianDist(tuple(keep), g.mean[p], g.cov[np.ix_(p, p)])


# ---- mixtures -------------------------------------------------------------


def log_normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.all(w == -math.inf):
        raise DegenerateResultError("cannot normalize: every weight is zero")
    return w - logsumexp(w)


def collapse(m: GaussianMixture) -> GaussianDist:
    """Single Gaussian with the mixture's first and second moments."""
    comps = [c for c in m.components if c.log_weight > -math.inf]
    if not comps:
        raise DegenerateResultError("empty mixture: no component has positive weight")
    if len(comps) == 1:
        return comps[0].dist
    w = np.exp(log_normalize([c.log_weight for c in comps]))
    means = np.stack([c.dist.mean for c in comps])
    mu = w @ means
    cov = np.zeros((mu.size, mu.size))
    for wi, c in zip(w, comps):
        dm = c.dist.mean - mu
        cov += wi * (c.dist.cov + np.outer(dm, dm))
    return GaussianDist(comps[0].dist.scope, mu, 0.5 * (cov + cov.T))


class MomentAccumulator:
    """Streaming moment-matched collapse.

    Components are folded in one at a time and discarded, so memory stays
    constant however many hypotheses are generated.
    """

    def __init__(self, scope: Sequence[str]):
        self.scope = tuple(scope)
        self.log_weight = -math.inf
        self.mean = np.zeros(len(self.scope))
        self.cov = np.zeros((len(self.scope), len(self.scope)))
        self.count = 0

    def add(self, log_weight: float, dist: GaussianDist | None) -> None:
        if log_weight == -math.inf:
            return
        self.count += 1
        total = np.logaddexp(self.log_weight, log_weight)
        alpha = math.exp(log_weight - total)
        self.log_weight = float(total)
        if dist is None or not self.scope:
            return
        if self.count == 1:
            self.mean = dist.mean.copy()
            self.cov = dist.cov.copy()
            return
        new_mean = (1 - alpha) * self.mean + alpha * dist.mean
        d_old = self.mean - new_mean
        d_new = dist.mean - new_mean
        self.cov = ((1 - alpha) * (self.cov + np.outer(d_old, d_old))
                    + alpha * (dist.cov + np.outer(d_new, d_new)))
        self.cov = 0.5 * (self.cov + self.cov.T)
        self.mean = new_mean

    def result(self) -> GaussianDist | None:
        if self.count == 0:
            return None
        return GaussianDist(self.scope, self.mean.copy(), self.cov.copy())
