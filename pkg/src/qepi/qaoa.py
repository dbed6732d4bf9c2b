"""Dense statevector QAOA for QUBO-encoded clustering.

The cost Hamiltonian is diagonal, so it is represented by its spectrum (one
energy per basis state). The mixer is the transverse field ``sum_q X_q``;
``exp(-i beta X)`` is applied qubit by qubit on amplitude pairs that differ
in one bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import as_distance_matrix
from .qubo import (
    MAX_QUBITS,
    CapacityError,
    Qubo,
    brute_force_solve,
    build_cluster_qubo,
    decode_assignment,
    energy_table,
    onehot_feasible,
    qubo_energy,
)
from .similarity import DistanceMatrix


@dataclass(frozen=True)
class CostSpectrum:
    """Diagonal of the cost Hamiltonian.

    ``energies`` are the values used in the phase rotation; the original
    energies are ``energies * scale + offset``.
    """

    energies: np.ndarray
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        E = np.asarray(self.energies, dtype=float)
        Q = E.size.bit_length() - 1
        if E.ndim != 1 or E.size != 1 << Q or Q < 1:
            raise ValueError(f"spectrum length must be a power of two >= 2, got {E.size}")
        if not np.all(np.isfinite(E)):
            raise ValueError("energies must be finite")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        E = E.copy()
        E.setflags(write=False)
        object.__setattr__(self, "energies", E)

    @property
    def num_qubits(self) -> int:
        return self.energies.size.bit_length() - 1

    @property
    def original(self) -> np.ndarray:
        return self.energies * self.scale + self.offset

    @classmethod
    def from_qubo(cls, q: Qubo, normalize: bool = True) -> "CostSpectrum":
        E = energy_table(q)
        scale = float(np.abs(E).max()) if normalize else 1.0
        if scale == 0:
            scale = 1.0
        return cls(E / scale, scale, 0.0)


@dataclass(frozen=True)
class QaoaParams:
    gammas: tuple[float, ...] = ()
    betas: tuple[float, ...] = ()

    def __post_init__(self):
        g = tuple(float(v) for v in self.gammas)
        b = tuple(float(v) for v in self.betas)
        if len(g) != len(b):
            raise ValueError("gammas and betas must have equal length")
        if not all(np.isfinite(g + b)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "betas", b)

    @property
    def p(self) -> int:
        return len(self.gammas)

    def as_vector(self) -> np.ndarray:
        return np.array(self.gammas + self.betas)

    @classmethod
    def from_vector(cls, x) -> "QaoaParams":
        x = np.asarray(x, dtype=float)
        p = x.size // 2
        return cls(tuple(x[:p]), tuple(x[p:]))


@dataclass(frozen=True)
class QuantumState:
    amplitudes: np.ndarray

    @property
    def num_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(self.probabilities.sum())


@dataclass
class OptimizerConfig:
    grid: int = 16
    restarts: int = 2
    perturbation: float = 0.3
    maxiter_per_layer: int = 200
    xatol: float = 1e-8
    fatol: float = 1e-10
    simplex_step: float = 0.1


def uniform_state(num_qubits: int) -> QuantumState:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise CapacityError(f"qubit count {num_qubits} outside [1, {MAX_QUBITS}]")
    dim = 1 << num_qubits
    return QuantumState(np.full(dim, dim**-0.5, dtype=complex))


def _apply_mixer(psi: np.ndarray, num_qubits: int, beta: float) -> np.ndarray:
    c, s = np.cos(beta), -1j * np.sin(beta)
    for q in range(num_qubits):
        view = psi.reshape(-1, 2, 1 << q)
        u = view[:, 0, :].copy()
        v = view[:, 1, :].copy()
        view[:, 0, :] = c * u + s * v
        view[:, 1, :] = s * u + c * v
    return psi


def qaoa_state(cs: CostSpectrum, params: QaoaParams) -> QuantumState:
    """Alternate cost phases and mixer rotations starting from ``|+>^Q``."""
    Q = cs.num_qubits
    psi = uniform_state(Q).amplitudes.copy()
    E = cs.energies
    for gamma, beta in zip(params.gammas, params.betas):
        psi *= np.exp(-1j * gamma * E)
        psi = _apply_mixer(psi, Q, beta)
    return QuantumState(psi)


def expectation(state: QuantumState, cs: CostSpectrum) -> float:
    """Mean cost in original (de-normalised) units."""
    if state.amplitudes.size != cs.energies.size:
        raise ValueError("state and spectrum dimensions differ")
    return float(state.probabilities @ cs.original)


def sample_bitstrings(state: QuantumState, shots: int, seed: int = 0) -> dict[int, int]:
    """Draw ``shots`` basis states by inverse-CDF sampling."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    cdf = np.cumsum(state.probabilities)
    cdf /= cdf[-1]
    u = np.random.default_rng(seed).random(shots)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    vals, counts = np.unique(idx, return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}


def _nelder_mead(f, x0, cfg: OptimizerConfig, p: int, callback=None):
    n = x0.size
    simplex = np.vstack([x0, x0 + cfg.simplex_step * np.eye(n)])
    res = minimize(
        f,
        x0,
        method="Nelder-Mead",
        callback=callback,
        options={
            "maxiter": cfg.maxiter_per_layer * p,
            "xatol": cfg.xatol,
            "fatol": cfg.fatol,
            "initial_simplex": simplex,
        },
    )
    x = res.x
    fx = f(x)
    f0 = f(x0)
    return (x, fx) if fx <= f0 else (x0, f0)


def optimize_qaoa(
    q: Qubo | CostSpectrum,
    p: int,
    opt_cfg: OptimizerConfig | None = None,
    seed: int = 0,
    trace: list | None = None,
) -> tuple[QaoaParams, float]:
    """Variationally minimise the QAOA expectation.

    Depth 1 starts from the best point of a ``grid x grid`` scan over
    ``gamma in [0, 2pi)``, ``beta in [0, pi)``; each deeper schedule is warm
    started from the previous optimum padded with ``(0, 0)``, plus
    ``restarts`` seeded perturbations of that point. Every stage uses
    Nelder-Mead, and the best vertex is never worse than the start point, so
    the optimum is non-increasing in depth.

    If ``trace`` is a list, one row ``(iter, gammas..., betas..., energy)``
    per simplex iteration is appended, with angles zero-padded to depth p.

    Returns the optimal schedule and its expectation in original units.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    cfg = opt_cfg or OptimizerConfig()
    cs = q if isinstance(q, CostSpectrum) else CostSpectrum.from_qubo(q)
    rng = np.random.default_rng(seed)
    E = cs.energies

    def objective(x):
        return float(qaoa_state(cs, QaoaParams.from_vector(x)).probabilities @ E)

    counter = [0]

    def recorder(depth):
        if trace is None:
            return None

        def cb(xk):
            counter[0] += 1
            g = np.zeros(p)
            b = np.zeros(p)
            g[:depth] = xk[:depth]
            b[:depth] = xk[depth:]
            trace.append((counter[0], *g, *b, objective(xk) * cs.scale + cs.offset))

        return cb

    gs = 2 * np.pi * np.arange(cfg.grid) / cfg.grid
    bs = np.pi * np.arange(cfg.grid) / cfg.grid
    best = min(((objective([g, b]), i, g, b) for i, (g, b) in enumerate((g, b) for g in gs for b in bs)))
    x, fx = _nelder_mead(objective, np.array([best[2], best[3]]), cfg, 1, recorder(1))

    for depth in range(2, p + 1):
        x0 = np.concatenate([x[: depth - 1], [0.0], x[depth - 1 :], [0.0]])
        starts = [x0] + [x0 + cfg.perturbation * rng.standard_normal(x0.size) for _ in range(cfg.restarts)]
        results = []
        for r, s in enumerate(starts):
            xr, fr = _nelder_mead(objective, s, cfg, depth, recorder(depth))
            results.append((fr, r, xr))
        fx, _, x = min(results, key=lambda t: (t[0], t[1]))

    return QaoaParams.from_vector(x), fx * cs.scale + cs.offset


def qaoa_cluster(
    dm: DistanceMatrix,
    k: int = 2,
    p: int = 2,
    shots: int = 1024,
    seed: int = 0,
    scheme: str | None = None,
    opt_cfg: OptimizerConfig | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, dict]:
    """Cluster by sampling an optimised QAOA state and decoding the best sample."""
    t0 = time.perf_counter()
    qubo, enc = build_cluster_qubo(dm, k, scheme)
    cs = CostSpectrum.from_qubo(qubo)
    params, exp_e = optimize_qaoa(cs, p, opt_cfg, seed, trace)
    state = qaoa_state(cs, params)
    hist = sample_bitstrings(state, shots, seed)
    scored = sorted((qubo_energy(qubo, b), b) for b in hist)
    best_e, best_b = scored[0]
    labels = decode_assignment(best_b, enc, dm)
    if enc.scheme == "onehot":
        feasible = sum(c for b, c in hist.items() if onehot_feasible(b, enc)) / shots
    else:
        feasible = 1.0
    diagnostics = {
        "encoding": enc.scheme,
        "num_qubits": enc.num_vars,
        "p": p,
        "shots": shots,
        "gammas": list(params.gammas),
        "betas": list(params.betas),
        "expected_energy": exp_e,
        "best_sample": best_b,
        "best_sample_energy": best_e,
        "feasible_sample_fraction": feasible,
        "wall_time": time.perf_counter() - t0,
    }
    return labels, diagnostics


class QAOAClustering(ClusterMixin, BaseEstimator):
    """Clustering by QAOA over a QUBO encoding of pairwise distances.

    Parameters
    ----------
    n_clusters : int, default=2
    p : int, default=2
        Number of cost/mixer layers.
    shots : int, default=1024
    encoding : {"compact2", "onehot"} or None
        ``None`` picks ``compact2`` for two clusters and ``onehot`` otherwise.
    metric : {"precomputed", "euclidean"}, default="precomputed"
    random_state : int, default=0

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    diagnostics_ : dict
    """

    def __init__(self, n_clusters=2, p=2, shots=1024, encoding=None, metric="precomputed", random_state=0):
        self.n_clusters = n_clusters
        self.p = p
        self.shots = shots
        self.encoding = encoding
        self.metric = metric
        self.random_state = random_state

    def fit(self, X, y=None):
        dm = as_distance_matrix(X, self.metric)
        self.labels_, self.diagnostics_ = qaoa_cluster(
            dm, self.n_clusters, self.p, self.shots, self.random_state, self.encoding
        )
        return self

    def optimal_labels(self, X):
        """Labels of the brute-force optimum of the same QUBO (reference)."""
        dm = as_distance_matrix(X, self.metric)
        qubo, enc = build_cluster_qubo(dm, self.n_clusters, self.encoding)
        b, _ = brute_force_solve(qubo)
        return decode_assignment(b, enc, dm)
