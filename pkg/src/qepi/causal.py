"""Discrete Bayesian networks for SDoH -> HIV analysis.

Structure is learned by BIC hill climbing, parameters by Laplace-smoothed
counting. Queries are answered exactly by variable elimination, or by an
exactly simulated amplitude-amplified rejection sampler: the joint
distribution is loaded as amplitudes ``sqrt(P(x))``, the evidence subspace is
amplified with Grover iterations, and evidence-inconsistent samples are
discarded.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .ingest import Dataset, DataError

DEFAULT_VARIABLES = ("housing_instability", "stigma_index", "prep_rate", "hiv_rate")
MAX_JOINT = 4096


class ZeroProbabilityEvidence(ValueError):
    """The evidence has probability zero under the network."""


# --------------------------------------------------------------------------
# Discretisation


@dataclass(frozen=True)
class DiscretizedDataset:
    variables: tuple[str, ...]
    cardinalities: tuple[int, ...]
    data: np.ndarray
    bin_edges: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != len(self.variables):
            raise ValueError("data must be (n_rows, n_variables)")
        for j, c in enumerate(self.cardinalities):
            if data.shape[0] and (data[:, j].min() < 0 or data[:, j].max() >= c):
                raise ValueError(f"levels of {self.variables[j]!r} outside [0, {c})")
        object.__setattr__(self, "data", data)

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def index(self, name: str) -> int:
        return self.variables.index(name)


def discretize_column(values, bins: int = 3) -> tuple[np.ndarray, tuple[float, ...], int]:
    """Quantile-bin one column; values equal to an edge fall in the lower bin.

    Returns ``(levels, edges, cardinality)``.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    v = np.asarray(values, dtype=float)
    uniq = np.unique(v)
    if uniq.size < bins:
        warnings.warn(f"only {uniq.size} distinct value(s) for {bins} bins; using distinct-value bins", stacklevel=2)
        edges = tuple(float(e) for e in (uniq[:-1] + uniq[1:]) / 2)
        levels = np.searchsorted(uniq, v)
        return levels.astype(np.int64), edges, max(int(uniq.size), 1)
    edges = np.quantile(v, np.arange(1, bins) / bins)
    levels = np.searchsorted(edges, v, side="left")
    return levels.astype(np.int64), tuple(float(e) for e in edges), bins


def discretize(data: Dataset, bins: int = 3, variables: Sequence[str] | None = None) -> DiscretizedDataset:
    if not data.is_normalized:
        raise DataError("discretize requires a normalized dataset")
    if variables is None:
        variables = [v for v in DEFAULT_VARIABLES if v in data.features]
    cols, cards, edges = [], [], {}
    for name in variables:
        if name not in data.features:
            raise DataError(f"unknown variable {name!r}")
        lv, e, c = discretize_column(data.column(name), bins)
        cols.append(lv)
        cards.append(c)
        edges[name] = e
    return DiscretizedDataset(tuple(variables), tuple(cards), np.column_stack(cols), edges)


# --------------------------------------------------------------------------
# Graphs and scores


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over ``n_nodes`` integer nodes."""

    n_nodes: int
    edges: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self):
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if a == b or not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValueError(f"invalid edge ({a}, {b})")
        object.__setattr__(self, "edges", edges)
        if self.topological_order() is None:
            raise ValueError("graph contains a cycle")

    def parents(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(a for a, b in self.edges if b == node))

    def topological_order(self) -> list[int] | None:
        indeg = [0] * self.n_nodes
        for _, b in self.edges:
            indeg[b] += 1
        ready = [v for v in range(self.n_nodes) if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for a, b in sorted(self.edges):
                if a == v:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
        return order if len(order) == self.n_nodes else None

    def is_acyclic_with(self, edges) -> bool:
        try:
            Dag(self.n_nodes, frozenset(edges))
        except ValueError:
            return False
        return True

    def skeleton(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(e) for e in self.edges)

    def v_structures(self) -> frozenset[tuple[int, int, int]]:
        """Triples ``(a, c, b)`` with ``a -> c <- b``, ``a < b`` and a, b non-adjacent."""
        skel = self.skeleton()
        out = set()
        for c in range(self.n_nodes):
            ps = self.parents(c)
            for a, b in itertools.combinations(ps, 2):
                if frozenset((a, b)) not in skel:
                    out.add((a, c, b))
        return frozenset(out)

    def markov_equivalent(self, other: "Dag") -> bool:
        return self.skeleton() == other.skeleton() and self.v_structures() == other.v_structures()


def family_score(data: DiscretizedDataset, node: int, parents: Sequence[int]) -> float:
    """Maximised log-likelihood of ``node`` given ``parents`` minus its BIC penalty."""
    X = data.data
    r = data.cardinalities[node]
    q = 1
    pidx = np.zeros(data.n_rows, dtype=np.int64)
    for p in parents:
        pidx = pidx * data.cardinalities[p] + X[:, p]
        q *= data.cardinalities[p]
    counts = np.bincount(pidx * r + X[:, node], minlength=q * r).reshape(q, r).astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.where(counts > 0, counts * np.log(counts / totals), 0.0).sum()
    n = max(data.n_rows, 1)
    return float(ll - 0.5 * (r - 1) * q * math.log(n))


def bic_score(dag: Dag, data: DiscretizedDataset) -> float:
    if dag.n_nodes != len(data.variables):
        raise ValueError("DAG and data disagree on the number of variables")
    return sum(family_score(data, v, dag.parents(v)) for v in range(dag.n_nodes))


def _random_dag(n, max_parents, rng) -> Dag:
    order = rng.permutation(n)
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            a, b = int(order[i]), int(order[j])
            if rng.random() < 0.3 and sum(1 for e in edges if e[1] == b) < max_parents:
                edges.add((a, b))
    return Dag(n, frozenset(edges))


def _climb(data: DiscretizedDataset, start: Dag, max_parents: int, max_iter: int = 1000) -> tuple[Dag, float]:
    n = start.n_nodes
    cache: dict = {}

    def fam(v, ps):
        key = (v, ps)
        if key not in cache:
            cache[key] = family_score(data, v, ps)
        return cache[key]

    dag = start
    score = sum(fam(v, dag.parents(v)) for v in range(n))
    for _ in range(max_iter):
        best = None
        edges = dag.edges
        for i, j in itertools.permutations(range(n), 2):
            if (i, j) in edges:
                cand = [("remove", edges - {(i, j)}), ("reverse", (edges - {(i, j)}) | {(j, i)})]
            elif (j, i) not in edges:
                cand = [("add", edges | {(i, j)})]
            else:
                continue
            for kind, new in cand:
                touched = {j} if kind != "reverse" else {i, j}
                if any(sum(1 for e in new if e[1] == t) > max_parents for t in touched):
                    continue
                new_parents = {t: tuple(sorted(a for a, b in new if b == t)) for t in touched}
                delta = sum(fam(t, new_parents[t]) - fam(t, dag.parents(t)) for t in touched)
                if delta > 1e-9 and (best is None or delta > best[0] + 1e-12):
                    if kind == "remove" or dag.is_acyclic_with(new):
                        best = (delta, new)
        if best is None:
            break
        dag = Dag(n, frozenset(best[1]))
        score += best[0]
    return dag, sum(fam(v, dag.parents(v)) for v in range(n))


def hill_climb_structure(
    data: DiscretizedDataset,
    max_parents: int = 2,
    restarts: int = 5,
    seed: int = 0,
    n_jobs: int = 1,
) -> Dag:
    """Greedy BIC search over single-edge add/remove/reverse moves.

    Restart 0 starts from the empty graph; restart ``r > 0`` from a random DAG
    drawn with ``default_rng(seed + r)``. Moves are scanned in lexicographic
    ``(i, j)`` order and the largest strict improvement wins. The best final
    score wins across restarts, ties to the lower restart index.
    """
    if max_parents < 1:
        raise ValueError("max_parents must be >= 1")
    n = len(data.variables)
    starts = [Dag(n)] + [
        _random_dag(n, max_parents, np.random.default_rng(seed + r)) for r in range(1, max(restarts, 1))
    ]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda s: _climb(data, s, max_parents), starts))
    else:
        results = [_climb(data, s, max_parents) for s in starts]
    best = max(range(len(results)), key=lambda r: (results[r][1], -r))
    return results[best][0]


# --------------------------------------------------------------------------
# Networks and inference


@dataclass
class BayesNet:
    """DAG plus CPTs; ``cpts[v]`` has shape ``(*parent_cards, card_v)``."""

    variables: tuple[str, ...]
    cardinalities: tuple[int, ...]
    dag: Dag
    cpts: dict[int, np.ndarray]

    def __post_init__(self):
        for v in range(self.dag.n_nodes):
            t = np.asarray(self.cpts[v], dtype=float)
            shape = tuple(self.cardinalities[p] for p in self.dag.parents(v)) + (self.cardinalities[v],)
            if t.shape != shape:
                raise ValueError(f"CPT of {self.variables[v]!r} has shape {t.shape}, expected {shape}")
            if (t < 0).any() or not np.allclose(t.sum(axis=-1), 1.0, atol=1e-10):
                raise ValueError(f"CPT rows of {self.variables[v]!r} must be distributions")
            self.cpts[v] = t

    def index(self, name) -> int:
        return name if isinstance(name, (int, np.integer)) else self.variables.index(name)

    def joint(self) -> np.ndarray:
        """Full joint table with one axis per variable (in variable order)."""
        size = math.prod(self.cardinalities)
        if size > MAX_JOINT * 64:
            raise ValueError("joint table too large to enumerate")
        n = len(self.variables)
        J = np.ones(self.cardinalities)
        for v in range(n):
            axes = [*self.dag.parents(v), v]
            t = self.cpts[v]
            # CPT axes are (parents..., v); put them in ascending variable order to broadcast
            order = np.argsort(axes)
            t = np.transpose(t, order)
            shape = [1] * n
            for a in sorted(axes):
                shape[a] = self.cardinalities[a]
            J = J * t.reshape(shape)
        return J

    def to_dict(self, bin_edges: Mapping | None = None) -> dict:
        return {
            "nodes": [
                {"name": name, "cardinality": c, "bin_edges": list((bin_edges or {}).get(name, ()))}
                for name, c in zip(self.variables, self.cardinalities)
            ],
            "edges": [[self.variables[a], self.variables[b]] for a, b in sorted(self.dag.edges)],
            "cpts": {
                self.variables[v]: {
                    "parents": [self.variables[p] for p in self.dag.parents(v)],
                    "table": self.cpts[v].tolist(),
                }
                for v in range(self.dag.n_nodes)
            },
        }

    def to_json(self, bin_edges: Mapping | None = None) -> str:
        return json.dumps(self.to_dict(bin_edges), indent=2)


def fit_parameters(dag: Dag, data: DiscretizedDataset, alpha: float = 1.0) -> BayesNet:
    """CPT entries ``(count + alpha) / (row_total + alpha * cardinality)``."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    X = data.data
    cpts = {}
    for v in range(dag.n_nodes):
        ps = dag.parents(v)
        shape = tuple(data.cardinalities[p] for p in ps) + (data.cardinalities[v],)
        counts = np.zeros(shape)
        np.add.at(counts, tuple(X[:, p] for p in ps) + (X[:, v],), 1.0)
        cpts[v] = (counts + alpha) / (counts.sum(axis=-1, keepdims=True) + alpha * shape[-1])
    return BayesNet(data.variables, data.cardinalities, dag, cpts)


def _factor_product(f1, f2):
    (v1, a1), (v2, a2) = f1, f2
    out = sorted(set(v1) | set(v2))
    return tuple(out), np.einsum(a1, list(v1), a2, list(v2), out)


def variable_elimination(net: BayesNet, query, evidence: Mapping | None = None) -> np.ndarray:
    """Exact ``P(query | evidence)`` by factor products and sum-outs.

    Hidden variables are eliminated greedily by minimum degree in the
    interaction graph (lowest index on ties).
    """
    q = net.index(query)
    ev = {net.index(k): int(v) for k, v in (evidence or {}).items()}
    if q in ev:
        raise ValueError("query variable cannot also be evidence")
    factors = []
    for v in range(len(net.variables)):
        vars_ = net.dag.parents(v) + (v,)
        arr = net.cpts[v]
        keep = []
        for axis, var in enumerate(vars_):
            if var in ev:
                arr = np.take(arr, [ev[var]], axis=axis)
            else:
                keep.append(var)
        arr = arr.reshape([net.cardinalities[var] for var in keep])
        factors.append((tuple(keep), arr))

    hidden = [v for v in range(len(net.variables)) if v != q and v not in ev]
    while hidden:
        def degree(v):
            nb = set()
            for vs, _ in factors:
                if v in vs:
                    nb.update(vs)
            return len(nb - {v})

        v = min(hidden, key=lambda h: (degree(h), h))
        hidden.remove(v)
        touching = [f for f in factors if v in f[0]]
        factors = [f for f in factors if v not in f[0]]
        if not touching:
            continue
        prod = touching[0]
        for f in touching[1:]:
            prod = _factor_product(prod, f)
        vs, arr = prod
        axis = vs.index(v)
        factors.append((vs[:axis] + vs[axis + 1 :], arr.sum(axis=axis)))

    result = np.ones(net.cardinalities[q])
    for vs, arr in factors:
        if vs == (q,):
            result = result * arr
        elif vs == ():
            result = result * float(arr)
        else:
            raise RuntimeError(f"residual factor over {vs}")
    z = result.sum()
    if z <= 0:
        raise ZeroProbabilityEvidence(f"evidence {evidence} has probability zero")
    return result / z


def _evidence_mask(net: BayesNet, ev: Mapping[int, int]) -> np.ndarray:
    mask = np.ones(net.cardinalities, dtype=bool)
    for var, lv in ev.items():
        sel = np.zeros(net.cardinalities[var], dtype=bool)
        sel[lv] = True
        shape = [1] * len(net.variables)
        shape[var] = -1
        mask &= sel.reshape(shape)
    return mask.ravel()


def amplify(amplitudes: np.ndarray, good: np.ndarray, iterations: int) -> np.ndarray:
    """Apply Grover iterations: flip the good subspace, then reflect about the start state."""
    psi0 = np.asarray(amplitudes, dtype=float)
    psi = psi0.copy()
    for _ in range(iterations):
        psi[good] *= -1
        psi = 2 * psi0 * (psi0 @ psi) - psi
    return psi


@dataclass(frozen=True)
class QuantumInference:
    distribution: np.ndarray
    acceptance_rate: float
    exact_acceptance: float
    iterations: int
    accepted: int


def quantum_rejection_sample(net: BayesNet, query, evidence: Mapping | None = None, shots: int = 4096, seed: int = 0) -> QuantumInference:
    """Estimate ``P(query | evidence)`` by amplitude-amplified rejection sampling.

    Uses ``r = floor(pi / (4 theta) - 1/2)`` iterations with
    ``theta = arcsin(sqrt(P(evidence)))``; the exact post-amplification
    acceptance is ``sin^2((2r + 1) theta)``.
    """
    size = math.prod(net.cardinalities)
    if size > MAX_JOINT:
        raise ValueError(f"joint space of {size} configurations exceeds the cap of {MAX_JOINT}")
    q = net.index(query)
    ev = {net.index(k): int(v) for k, v in (evidence or {}).items()}
    if q in ev:
        raise ValueError("query variable cannot also be evidence")
    P = net.joint().ravel()
    good = _evidence_mask(net, ev)
    p_e = float(P[good].sum())
    if p_e <= 0:
        raise ZeroProbabilityEvidence(f"evidence {evidence} has probability zero")
    theta = math.asin(math.sqrt(min(p_e, 1.0)))
    # the guard keeps exact integers (e.g. P(e) = 1/4) from flooring one step low
    r = max(int(math.floor(math.pi / (4 * theta) - 0.5 + 1e-9)), 0)
    psi = amplify(np.sqrt(P), good, r)
    probs = psi**2
    exact = float(probs[good].sum())
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = np.random.default_rng(seed).random(shots)
    draws = np.minimum(np.searchsorted(cdf, u, side="right"), size - 1)
    kept = draws[good[draws]]
    if kept.size == 0:
        raise ZeroProbabilityEvidence("no evidence-consistent samples were drawn")
    levels = np.unravel_index(kept, net.cardinalities)[q]
    dist = np.bincount(levels, minlength=net.cardinalities[q]) / kept.size
    return QuantumInference(dist, kept.size / shots, exact, r, int(kept.size))


def influence_scores(
    net: BayesNet,
    target,
    method: str = "exact",
    shots: int = 8192,
    seed: int = 0,
    diagnostics: list | None = None,
) -> list[tuple[str, float]]:
    """Max contrast of ``P(target = top level | F = f)`` across levels of each F.

    Returned sorted by score, highest first (variable order on ties).
    ``method="quantum"`` estimates each conditional by
    :func:`quantum_rejection_sample`; per-query diagnostics are appended to
    ``diagnostics`` when given.
    """
    t = net.index(target)
    top = net.cardinalities[t] - 1
    scores = []
    call = 0
    for f in range(len(net.variables)):
        if f == t:
            continue
        probs = []
        for lv in range(net.cardinalities[f]):
            ev = {f: lv}
            try:
                if method == "exact":
                    probs.append(float(variable_elimination(net, t, ev)[top]))
                elif method == "quantum":
                    res = quantum_rejection_sample(net, t, ev, shots, seed + call)
                    call += 1
                    probs.append(float(res.distribution[top]))
                    if diagnostics is not None:
                        diagnostics.append(
                            {
                                "factor": net.variables[f],
                                "level": lv,
                                "iterations": res.iterations,
                                "acceptance_rate": res.acceptance_rate,
                                "exact_acceptance": res.exact_acceptance,
                            }
                        )
                else:
                    raise ValueError(f"unknown method {method!r}")
            except ZeroProbabilityEvidence:
                continue
        score = max(probs) - min(probs) if len(probs) >= 2 else 0.0
        scores.append((f, score))
    scores.sort(key=lambda s: (-s[1], s[0]))
    return [(net.variables[f], float(s)) for f, s in scores]


class BayesianNetwork(BaseEstimator):
    """Structure + parameter learner for discrete data.

    Parameters
    ----------
    variable_names : sequence of str or None
    max_parents : int, default=2
    restarts : int, default=5
    alpha : float, default=1.0
        Laplace pseudo-count.
    random_state : int, default=0
    n_jobs : int, default=1
    """

    def __init__(self, variable_names=None, max_parents=2, restarts=5, alpha=1.0, random_state=0, n_jobs=1):
        self.variable_names = variable_names
        self.max_parents = max_parents
        self.restarts = restarts
        self.alpha = alpha
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, cardinalities=None):
        if isinstance(X, DiscretizedDataset):
            dd = X
        else:
            X = check_array(X, dtype=np.int64)
            names = tuple(self.variable_names or (f"x{i}" for i in range(X.shape[1])))
            cards = tuple(cardinalities or (int(X[:, j].max()) + 1 for j in range(X.shape[1])))
            dd = DiscretizedDataset(names, cards, X)
        self.n_features_in_ = len(dd.variables)
        self.dag_ = hill_climb_structure(dd, self.max_parents, self.restarts, self.random_state, self.n_jobs)
        self.net_ = fit_parameters(self.dag_, dd, self.alpha)
        self.score_ = bic_score(self.dag_, dd)
        return self

    def query(self, variable, evidence=None):
        check_is_fitted(self, "net_")
        return variable_elimination(self.net_, variable, evidence)

    def influence(self, target, method="exact", shots=8192):
        check_is_fitted(self, "net_")
        return influence_scores(self.net_, target, method, shots, self.random_state)
