"""QUBO encodings of clustering, Ising conversion, and classical solvers.

Bitstrings are integer basis indices with little-endian variable order:
variable ``q`` of index ``b`` is ``(b >> q) & 1``. Spins follow
``z = 1 - 2x`` so bit 0 is spin +1.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .similarity import DistanceMatrix

MAX_QUBITS = 24


class CapacityError(ValueError):
    """Problem exceeds the exact-simulation qubit cap."""


@dataclass(frozen=True)
class Qubo:
    num_vars: int
    linear: np.ndarray
    quadratic: Mapping[tuple[int, int], float] = field(default_factory=dict)
    constant: float = 0.0

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(-1)
        if lin.shape != (self.num_vars,):
            raise ValueError(f"linear has length {lin.size}, expected {self.num_vars}")
        quad = {}
        for (a, b), c in dict(self.quadratic).items():
            a, b = int(a), int(b)
            if not 0 <= a < b < self.num_vars:
                raise ValueError(f"quadratic key ({a}, {b}) must satisfy 0 <= q1 < q2 < {self.num_vars}")
            if c != 0:
                quad[(a, b)] = quad.get((a, b), 0.0) + float(c)
        if not np.all(np.isfinite(lin)) or not all(math.isfinite(c) for c in quad.values()):
            raise ValueError("QUBO coefficients must be finite")
        if not math.isfinite(self.constant):
            raise ValueError("constant must be finite")
        lin.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", dict(sorted(quad.items())))
        object.__setattr__(self, "constant", float(self.constant))

    @classmethod
    def zero(cls, num_vars: int) -> "Qubo":
        return cls(num_vars, np.zeros(num_vars))

    def coupling_matrix(self) -> np.ndarray:
        """Strict upper-triangular dense matrix of the quadratic terms."""
        W = np.zeros((self.num_vars, self.num_vars))
        for (a, b), c in self.quadratic.items():
            W[a, b] = c
        return W

    def max_abs_coeff(self) -> float:
        vals = list(np.abs(self.linear)) + [abs(c) for c in self.quadratic.values()]
        return float(max(vals, default=0.0))

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_vars": self.num_vars,
                "constant": self.constant,
                "linear": [float(v) for v in self.linear],
                "quadratic": [[a, b, c] for (a, b), c in self.quadratic.items()],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Qubo":
        obj = json.loads(text)
        quad = {(int(a), int(b)): float(c) for a, b, c in obj["quadratic"]}
        return cls(int(obj["num_vars"]), obj["linear"], quad, float(obj["constant"]))


@dataclass(frozen=True)
class IsingModel:
    h: np.ndarray
    J: Mapping[tuple[int, int], float]
    offset: float = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.h)


@dataclass(frozen=True)
class Encoding:
    scheme: str
    n: int
    k: int
    penalty: float = 0.0

    @property
    def num_vars(self) -> int:
        return self.n * self.k if self.scheme == "onehot" else self.n

    def var(self, i: int, c: int) -> int:
        if self.scheme != "onehot":
            raise ValueError("var(i, c) is only defined for the onehot scheme")
        return i * self.k + c


# --------------------------------------------------------------------------
# Energies


def bits_of(b: int, num_vars: int) -> np.ndarray:
    return np.array([(b >> q) & 1 for q in range(num_vars)], dtype=int)


def spins_of(b: int, num_vars: int) -> np.ndarray:
    return 1 - 2 * bits_of(b, num_vars)


def qubo_energy(q: Qubo, b: int) -> float:
    if not 0 <= b < (1 << q.num_vars):
        raise IndexError(f"basis index {b} out of range for {q.num_vars} variables")
    x = bits_of(b, q.num_vars)
    e = q.constant + float(q.linear @ x)
    for (a, c2), c in q.quadratic.items():
        if x[a] and x[c2]:
            e += c
    return e


def energy_table(q: Qubo) -> np.ndarray:
    """Energy of every basis state, built by doubling one variable at a time."""
    if q.num_vars > MAX_QUBITS:
        raise CapacityError(f"{q.num_vars} variables exceeds the cap of {MAX_QUBITS}")
    W = q.coupling_matrix()
    E = np.array([q.constant])
    for v in range(q.num_vars):
        field_v = np.zeros(1)
        for j in range(v):
            field_v = np.concatenate([field_v, field_v + W[j, v]])
        E = np.concatenate([E, E + q.linear[v] + field_v])
    return E


def qubo_to_ising(q: Qubo) -> IsingModel:
    """Exact change of variables ``x = (1 - z) / 2``."""
    h = -0.5 * q.linear.copy()
    offset = q.constant + 0.5 * q.linear.sum()
    J = {}
    for (a, b), c in q.quadratic.items():
        J[(a, b)] = c / 4
        h[a] -= c / 4
        h[b] -= c / 4
        offset += c / 4
    return IsingModel(h, J, offset)


def ising_energy(model: IsingModel, spins) -> float:
    z = np.asarray(spins, dtype=float)
    e = model.offset + float(model.h @ z)
    for (a, b), c in model.J.items():
        e += c * z[a] * z[b]
    return e


# --------------------------------------------------------------------------
# Clustering encodings


def build_cluster_qubo(dm: DistanceMatrix, k: int, scheme: str | None = None) -> tuple[Qubo, Encoding]:
    """Encode k-way min-intra-distance clustering as a QUBO.

    ``compact2`` (default when ``k == 2``) uses one variable per point and is
    exactly weighted max-cut. ``onehot`` uses ``n * k`` variables with a
    quadratic penalty ``A * sum_i (sum_c x_ic - 1)^2`` where
    ``A = 2 * max_i sum_j d[i, j]``.
    """
    n = dm.n
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < 2:
        raise ValueError("need at least two points")
    scheme = scheme or ("compact2" if k == 2 else "onehot")
    d = dm.d

    if scheme == "compact2":
        if k != 2:
            raise ValueError("compact2 encoding requires k == 2")
        if n > MAX_QUBITS:
            raise CapacityError(f"compact2 needs {n} qubits, exceeding the cap of {MAX_QUBITS}")
        iu = np.triu_indices(n, 1)
        linear = -d.sum(axis=1)
        quad = {(int(i), int(j)): 2.0 * d[i, j] for i, j in zip(*iu)}
        return Qubo(n, linear, quad, float(d[iu].sum())), Encoding("compact2", n, 2)

    if scheme != "onehot":
        raise ValueError(f"unknown encoding scheme {scheme!r}")
    if n * k > MAX_QUBITS:
        raise CapacityError(f"onehot needs n*k = {n * k} qubits, exceeding the cap of {MAX_QUBITS}")
    if k > n:
        warnings.warn(f"k={k} exceeds the number of points n={n}", stacklevel=2)
    A = 2.0 * float(d.sum(axis=1).max())
    enc = Encoding("onehot", n, k, A)
    quad: dict[tuple[int, int], float] = {}
    for c in range(k):
        for i in range(n):
            for j in range(i + 1, n):
                quad[(enc.var(i, c), enc.var(j, c))] = d[i, j]
    for i in range(n):
        for c in range(k):
            for c2 in range(c + 1, k):
                quad[(enc.var(i, c), enc.var(i, c2))] = 2 * A
    linear = np.full(n * k, -A)
    return Qubo(n * k, linear, quad, A * n), enc


def onehot_feasible(b: int, enc: Encoding) -> bool:
    x = bits_of(b, enc.num_vars).reshape(enc.n, enc.k)
    return bool((x.sum(axis=1) == 1).all())


def canonical_labels(labels) -> np.ndarray:
    """Compress non-negative ids to ``0..c-1`` preserving their order; keep -1."""
    labels = np.asarray(labels, dtype=int)
    out = labels.copy()
    ids = np.unique(labels[labels >= 0])
    for new, old in enumerate(ids):
        out[labels == old] = new
    return out


def decode_assignment(b: int, enc: Encoding, dm: DistanceMatrix) -> np.ndarray:
    """Map a bitstring to per-point labels, repairing one-hot violations.

    Points with exactly one set cluster bit keep it. The rest are assigned in
    index order to the cluster with the smallest summed distance to points
    already assigned (lowest cluster index on ties).
    """
    if not 0 <= b < (1 << enc.num_vars):
        raise IndexError(f"basis index {b} out of range")
    if enc.scheme == "compact2":
        return canonical_labels(bits_of(b, enc.n))
    x = bits_of(b, enc.num_vars).reshape(enc.n, enc.k)
    labels = np.full(enc.n, -1)
    ok = x.sum(axis=1) == 1
    labels[ok] = x[ok].argmax(axis=1)
    for i in np.flatnonzero(~ok):
        cost = [dm.d[i, labels == c].sum() for c in range(enc.k)]
        labels[i] = int(np.argmin(cost))
    return canonical_labels(labels)


# --------------------------------------------------------------------------
# Classical solvers


def _argmin_low(E: np.ndarray) -> int:
    emin = E.min()
    tol = 1e-12 * max(1.0, abs(emin))
    return int(np.flatnonzero(E <= emin + tol)[0])


def brute_force_solve(q: Qubo) -> tuple[int, float]:
    """Exhaustive minimum; ties resolve to the lowest basis index."""
    if q.num_vars > MAX_QUBITS:
        raise CapacityError(f"{q.num_vars} variables exceeds the cap of {MAX_QUBITS}")
    E = energy_table(q)
    b = _argmin_low(E)
    return b, qubo_energy(q, b)


def anneal_solve(
    q: Qubo,
    sweeps: int = 2000,
    restarts: int = 8,
    seed: int = 0,
    T0: float | None = None,
    Tf: float = 1e-3,
) -> tuple[int, float]:
    """Single-flip Metropolis simulated annealing with a geometric schedule.

    Restart ``r`` draws from ``default_rng(seed + r)``; all restarts are
    advanced together in lock-step, and the result is the lowest energy seen
    (lowest basis index on ties), so the restart count only ever adds
    candidates.
    """
    if sweeps < 1 or restarts < 1:
        raise ValueError("sweeps and restarts must be >= 1")
    Q = q.num_vars
    if Q == 0:
        return 0, q.constant
    if T0 is None:
        T0 = 10.0 * q.max_abs_coeff()
    T0 = max(T0, Tf)
    temps = T0 * (Tf / T0) ** (np.arange(sweeps) / sweeps)

    W = q.coupling_matrix()
    W = W + W.T
    R = restarts
    X = np.empty((R, Q), dtype=float)
    order = np.empty((R, sweeps, Q), dtype=np.intp)
    thresh = np.empty((R, sweeps, Q))
    for r in range(R):
        rng = np.random.default_rng(seed + r)
        X[r] = rng.integers(0, 2, size=Q)
        order[r] = rng.random((sweeps, Q)).argsort(axis=1)
        u = rng.random((sweeps, Q))
        thresh[r] = -temps[:, None] * np.log1p(-u)

    H = q.linear + X @ W
    E = q.constant + X @ q.linear + 0.5 * np.einsum("ri,ij,rj->r", X, W, X)
    best_E = E.copy()
    best_X = X.copy()
    rows = np.arange(R)
    for s in range(sweeps):
        for t in range(Q):
            v = order[:, s, t]
            sign = 1.0 - 2.0 * X[rows, v]
            delta = sign * H[rows, v]
            acc = delta < thresh[:, s, t]
            dx = sign * acc
            X[rows, v] += dx
            H += dx[:, None] * W[v]
            E += delta * acc
            better = E < best_E - 1e-12
            if better.any():
                best_E[better] = E[better]
                best_X[better] = X[better]

    weights = 1 << np.arange(Q, dtype=np.int64)
    cands = []
    for r in range(R):
        b = int(best_X[r].astype(np.int64) @ weights)
        cands.append((qubo_energy(q, b), b))
    e, b = min(cands)
    return b, e
