"""Next-year HIV-rate forecasting: a tanh MLP and a hybrid model with a
variational quantum layer.

Both models are trained by the same mini-batch momentum loop with early
stopping on validation MSE. The classical path is differentiated by
backpropagation; the quantum layer by the parameter-shift rule, whose exact
Jacobians are chained into the surrounding dense layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ingest import Dataset, DataError

INPUT_FEATURES = ("housing_instability", "stigma_index", "hiv_rate", "lat", "lon")
SHIFT = np.pi / 2


def logistic(x):
    return expit(x)


# --------------------------------------------------------------------------
# Supervised pairs


@dataclass(frozen=True)
class SupervisedSet:
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    year: np.ndarray
    zips: tuple[str, ...] = ()

    def __len__(self):
        return len(self.y)

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.split == name
        return self.X[m], self.y[m]


def build_supervised(data: Dataset) -> SupervisedSet:
    """Pair each (zip, year t) with the same zip's rate at t+1.

    Rows are tagged by target year: the final year is ``test``, the one
    before is ``validation``, earlier years are ``train``. Latitude and
    longitude are min-max scaled over the dataset.
    """
    if not data.is_normalized:
        raise DataError("build_supervised requires a normalized dataset")
    years = data.years
    if len(years) < 2:
        raise DataError("need at least two distinct years")
    feats = data.matrix(INPUT_FEATURES)
    for j in (3, 4):
        col = feats[:, j]
        span = col.max() - col.min()
        feats[:, j] = (col - col.min()) / span if span > 0 else 0.0
    hiv = data.column("hiv_rate")
    index = {(r.zip, r.year): i for i, r in enumerate(data.records)}
    rows, targets, tags, tyears, zips = [], [], [], [], []
    for i, r in enumerate(data.records):
        j = index.get((r.zip, r.year + 1))
        if j is None:
            continue
        rows.append(feats[i])
        targets.append(hiv[j])
        ty = r.year + 1
        tags.append("test" if ty == years[-1] else "validation" if ty == years[-2] else "train")
        tyears.append(ty)
        zips.append(r.zip)
    X = np.array(rows, dtype=float).reshape(-1, len(INPUT_FEATURES))
    return SupervisedSet(X, np.array(targets, dtype=float), np.array(tags), np.array(tyears, dtype=int), tuple(zips))


# --------------------------------------------------------------------------
# Classical network


@dataclass
class MlpModel:
    """Dense network with tanh hidden layers and a logistic output unit."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng) -> "MlpModel":
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, size=(a, b)))
            bs.append(np.zeros(b))
        return cls(ws, bs)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = theta[pos : pos + b.size].copy()
            pos += b.size

    def _forward(self, X):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            s = h @ w + b
            h = logistic(s) if i == last else np.tanh(s)
            acts.append(h)
        return acts

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} inputs, got {X.shape[1]}")
        return self._forward(X)[-1][:, 0]

    def loss_grad(self, X, y) -> tuple[float, np.ndarray]:
        """Mean squared error and its gradient by backpropagation."""
        acts = self._forward(X)
        yhat = acts[-1][:, 0]
        err = yhat - y
        loss = float(np.mean(err**2))
        delta = (2.0 / len(y) * err * yhat * (1 - yhat))[:, None]
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            grads.append((gw, gb))
            if i:
                delta = (delta @ self.weights[i].T) * (1 - acts[i] ** 2)
        grads.reverse()
        return loss, np.concatenate([g.ravel() for pair in grads for g in pair])


def mlp_forward(model: MlpModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != model.sizes[0]:
        raise ValueError(f"expected an input row of length {model.sizes[0]}")
    return float(model.predict(x[None, :])[0])


# --------------------------------------------------------------------------
# Variational quantum layer


def _apply_1q(states: np.ndarray, gate: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Apply a 2x2 gate (shared, or one per batch row) to ``qubit`` of (B, 2^n) states."""
    B = states.shape[0]
    view = states.reshape(B, -1, 2, 1 << qubit)
    if gate.ndim == 2:
        out = np.einsum("ab,kmbj->kmaj", gate, view)
    else:
        out = np.einsum("kab,kmbj->kmaj", gate, view)
    return out.reshape(B, 1 << n)


def _ry(a):
    c, s = np.cos(a / 2), np.sin(a / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(a):
    return np.array([[np.exp(-0.5j * a), 0], [0, np.exp(0.5j * a)]], dtype=complex)


def _cz_pairs(n: int) -> list[tuple[int, int]]:
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def _z_signs(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return np.stack([1 - 2 * ((idx >> i) & 1) for i in range(n)], axis=1).astype(float)


@dataclass
class QuantumLayer:
    """``n_qubits`` angle-encoded qubits followed by ``n_blocks`` entangling blocks.

    ``thetas`` has shape ``(n_blocks, n_qubits, 2)``: per qubit an Ry then an
    Rz angle, after which a ring of CZ gates is applied.
    """

    n_qubits: int = 4
    n_blocks: int = 2
    thetas: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.thetas is None:
            self.thetas = np.zeros((self.n_blocks, self.n_qubits, 2))
        self.thetas = np.asarray(self.thetas, dtype=float).reshape(self.n_blocks, self.n_qubits, 2)

    @property
    def n_params(self) -> int:
        return self.thetas.size

    def block_unitary(self, block: np.ndarray) -> np.ndarray:
        """Right-multiplying matrix ``R`` such that ``states @ R`` applies one block."""
        n = self.n_qubits
        R = np.eye(1 << n, dtype=complex)
        for i in range(n):
            R = _apply_1q(R, _ry(block[i, 0]), i, n)
            R = _apply_1q(R, _rz(block[i, 1]), i, n)
        idx = np.arange(1 << n)
        for a, b in _cz_pairs(n):
            R[:, ((idx >> a) & 1 & (idx >> b)) == 1] *= -1
        return R

    def encode(self, angles: np.ndarray) -> np.ndarray:
        """Product state ``prod_i Ry(angle_i)|0>`` for each row of ``angles``."""
        angles = np.atleast_2d(angles)
        c, s = np.cos(angles / 2), np.sin(angles / 2)
        idx = np.arange(1 << self.n_qubits)
        amp = np.ones((angles.shape[0], idx.size))
        for i in range(self.n_qubits):
            bit = ((idx >> i) & 1).astype(bool)
            amp *= np.where(bit, s[:, i : i + 1], c[:, i : i + 1])
        return amp.astype(complex)

    def expectations(self, angles, thetas=None, unitaries=None) -> np.ndarray:
        """``<Z_i>`` for every qubit and row of encoding angles, shape (B, n)."""
        if unitaries is None:
            th = self.thetas if thetas is None else thetas
            unitaries = [self.block_unitary(b) for b in th]
        psi = self.encode(angles)
        for R in unitaries:
            psi = psi @ R
        return (np.abs(psi) ** 2) @ _z_signs(self.n_qubits)

    def angles_of(self, z) -> np.ndarray:
        return np.pi * logistic(np.atleast_2d(np.asarray(z, dtype=float)))

    def jacobians(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Parameter-shift Jacobians of ``<Z>`` w.r.t. thetas and pre-layer inputs.

        Returns arrays of shape ``(B, n, n_params)`` and ``(B, n, n)``.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        angles = self.angles_of(z)
        base = [self.block_unitary(b) for b in self.thetas]
        flat = self.thetas.ravel()
        J_theta = np.empty((z.shape[0], self.n_qubits, flat.size))
        for p in range(flat.size):
            l = p // (2 * self.n_qubits)
            vals = []
            for sign in (1.0, -1.0):
                th = flat.copy()
                th[p] += sign * SHIFT
                us = list(base)
                us[l] = self.block_unitary(th.reshape(self.thetas.shape)[l])
                vals.append(self.expectations(angles, unitaries=us))
            J_theta[:, :, p] = 0.5 * (vals[0] - vals[1])
        J_angle = np.empty((z.shape[0], self.n_qubits, self.n_qubits))
        for j in range(self.n_qubits):
            plus = angles.copy()
            minus = angles.copy()
            plus[:, j] += SHIFT
            minus[:, j] -= SHIFT
            J_angle[:, :, j] = 0.5 * (self.expectations(plus, unitaries=base) - self.expectations(minus, unitaries=base))
        sig = logistic(z)
        J_z = J_angle * (np.pi * sig * (1 - sig))[:, None, :]
        return J_theta, J_z


def vqc_forward(layer: QuantumLayer, z=None, angles=None) -> np.ndarray:
    """Expectation values ``<Z_i>`` for one input vector.

    Pass ``angles`` to bypass the ``pi * logistic(z)`` encoding.
    """
    if angles is None:
        z = np.asarray(z, dtype=float)
        if z.shape != (layer.n_qubits,):
            raise ValueError(f"expected {layer.n_qubits} inputs, got shape {z.shape}")
        angles = layer.angles_of(z)
    return layer.expectations(np.atleast_2d(angles))[0]


def vqc_gradient(layer: QuantumLayer, z) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians for one input: ``(n, n_params)`` w.r.t. thetas and ``(n, n)`` w.r.t. z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (layer.n_qubits,):
        raise ValueError(f"expected {layer.n_qubits} inputs, got shape {z.shape}")
    jt, jz = layer.jacobians(z[None, :])
    return jt[0], jz[0]


@dataclass
class HybridModel:
    """Dense (d -> q), quantum layer, dense (q -> 1) with logistic output."""

    front_w: np.ndarray
    front_b: np.ndarray
    layer: QuantumLayer
    back_w: np.ndarray
    back_b: float = 0.0

    @classmethod
    def init(cls, n_inputs, n_qubits, n_blocks, rng) -> "HybridModel":
        lim = math.sqrt(6.0 / (n_inputs + n_qubits))
        fw = rng.uniform(-lim, lim, size=(n_inputs, n_qubits))
        thetas = rng.normal(0.0, 0.5, size=(n_blocks, n_qubits, 2))
        lim2 = math.sqrt(6.0 / (n_qubits + 1))
        bw = rng.uniform(-lim2, lim2, size=n_qubits)
        return cls(fw, np.zeros(n_qubits), QuantumLayer(n_qubits, n_blocks, thetas), bw, 0.0)

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.front_w.ravel(), self.front_b, self.layer.thetas.ravel(), self.back_w, [self.back_b]]
        )

    def set_flat(self, theta: np.ndarray) -> None:
        d, q = self.front_w.shape
        pos = 0
        self.front_w = theta[pos : pos + d * q].reshape(d, q).copy()
        pos += d * q
        self.front_b = theta[pos : pos + q].copy()
        pos += q
        n = self.layer.n_params
        self.layer.thetas = theta[pos : pos + n].reshape(self.layer.thetas.shape).copy()
        pos += n
        self.back_w = theta[pos : pos + q].copy()
        pos += q
        self.back_b = float(theta[pos])

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.front_w.shape[0]:
            raise ValueError(f"expected {self.front_w.shape[0]} inputs, got {X.shape[1]}")
        z = X @ self.front_w + self.front_b
        e = self.layer.expectations(self.layer.angles_of(z))
        return logistic(e @ self.back_w + self.back_b)

    def loss_grad(self, X, y) -> tuple[float, np.ndarray]:
        z = X @ self.front_w + self.front_b
        e = self.layer.expectations(self.layer.angles_of(z))
        yhat = logistic(e @ self.back_w + self.back_b)
        err = yhat - y
        loss = float(np.mean(err**2))
        g_s = 2.0 / len(y) * err * yhat * (1 - yhat)
        g_bw = e.T @ g_s
        g_bb = g_s.sum()
        g_e = g_s[:, None] * self.back_w[None, :]
        J_theta, J_z = self.layer.jacobians(z)
        g_theta = np.einsum("bi,bip->p", g_e, J_theta)
        g_z = np.einsum("bi,bij->bj", g_e, J_z)
        g_fw = X.T @ g_z
        g_fb = g_z.sum(axis=0)
        return loss, np.concatenate([g_fw.ravel(), g_fb, g_theta, g_bw, [g_bb]])


# --------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("learning_rate, batch_size, max_epochs and patience must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def best_so_far(self) -> list[float]:
        return list(np.minimum.accumulate(self.val_mse)) if self.val_mse else []

    def to_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse"]
        lines += [f"{e},{t!r},{v!r}" for e, t, v in zip(self.epochs, self.train_mse, self.val_mse)]
        return "\n".join(lines) + "\n"


def _mse(model, X, y) -> float:
    return float(np.mean((model.predict(X) - y) ** 2))


def fit_model(model, X, y, X_val, y_val, cfg: TrainConfig) -> TrainHistory:
    """Momentum SGD on MSE with early stopping; leaves the best-validation weights in ``model``."""
    if len(y) == 0 or len(y_val) == 0:
        raise DataError("training and validation splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    theta = model.get_flat()
    velocity = np.zeros_like(theta)
    best_theta = theta.copy()
    best_val = _mse(model, X_val, y_val)
    hist = TrainHistory()
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _, g = model.loss_grad(X[idx], y[idx])
            velocity = cfg.momentum * velocity - cfg.learning_rate * g
            theta = theta + velocity
            model.set_flat(theta)
        tr = _mse(model, X, y)
        va = _mse(model, X_val, y_val)
        hist.epochs.append(epoch)
        hist.train_mse.append(tr)
        hist.val_mse.append(va)
        if va < best_val:
            best_val, best_theta, hist.best_epoch, wait = va, theta.copy(), epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                hist.stopped_early = True
                break
    model.set_flat(best_theta)
    return hist


def train_mlp(data: SupervisedSet, cfg: TrainConfig, hidden=(16, 8)) -> tuple[MlpModel, TrainHistory]:
    X, y = data.subset("train")
    Xv, yv = data.subset("validation")
    model = MlpModel.init([data.X.shape[1], *hidden, 1], np.random.default_rng(cfg.seed))
    return model, fit_model(model, X, y, Xv, yv, cfg)


def train_hybrid(data: SupervisedSet, cfg: TrainConfig, n_qubits=4, n_blocks=2) -> tuple[HybridModel, TrainHistory]:
    X, y = data.subset("train")
    Xv, yv = data.subset("validation")
    model = HybridModel.init(data.X.shape[1], n_qubits, n_blocks, np.random.default_rng(cfg.seed))
    return model, fit_model(model, X, y, Xv, yv, cfg)


def _errors(pred, y) -> dict:
    err = pred - y
    return {"n": int(len(y)), "mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err**2)))}


def evaluate_forecast(model, data: SupervisedSet) -> dict:
    """MAE and RMSE for each non-empty split and each target year."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty set")
    pred = model.predict(data.X)
    out = {"splits": {}, "years": {}}
    for name in ("train", "validation", "test"):
        m = data.split == name
        if m.any():
            out["splits"][name] = _errors(pred[m], data.y[m])
    for yr in sorted(set(data.year.tolist())):
        m = data.year == yr
        out["years"][str(yr)] = _errors(pred[m], data.y[m])
    return out


# --------------------------------------------------------------------------
# Estimators


class _ForecasterBase(RegressorMixin, BaseEstimator):
    def _config(self):
        return TrainConfig(
            self.learning_rate, self.momentum, self.batch_size, self.max_epochs, self.patience, self.random_state
        )

    def fit(self, X, y, X_val=None, y_val=None):
        """Train; without an explicit validation set the training data doubles as one."""
        X, y = check_X_y(X, y, dtype=float)
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val, y_val = check_X_y(X_val, y_val, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.model_ = self._init_model(X.shape[1], np.random.default_rng(self.random_state))
        self.history_ = fit_model(self.model_, X, y, X_val, y_val, self._config())
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X, dtype=float))


class MLPForecaster(_ForecasterBase):
    """Feedforward regressor (tanh hidden layers, logistic output) for targets in [0, 1]."""

    def __init__(
        self,
        hidden=(16, 8),
        learning_rate=0.1,
        momentum=0.9,
        batch_size=16,
        max_epochs=500,
        patience=20,
        random_state=0,
    ):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _init_model(self, n_in, rng):
        return MlpModel.init([n_in, *self.hidden, 1], rng)


class HybridForecaster(_ForecasterBase):
    """Dense -> variational quantum layer -> dense regressor for targets in [0, 1]."""

    def __init__(
        self,
        n_qubits=4,
        n_blocks=2,
        learning_rate=0.1,
        momentum=0.9,
        batch_size=16,
        max_epochs=500,
        patience=20,
        random_state=0,
    ):
        self.n_qubits = n_qubits
        self.n_blocks = n_blocks
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _init_model(self, n_in, rng):
        return HybridModel.init(n_in, self.n_qubits, self.n_blocks, rng)
