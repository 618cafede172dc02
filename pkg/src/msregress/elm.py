"""Extreme learning machine regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = {
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
}

RCOND = 1e-10


def default_hidden(n: int) -> int:
    return max(1, min(200, (2 * n) // 3))


def random_layer(p: int, hidden: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Input weights (p x hidden) and biases, i.i.d. uniform on [-1, 1]."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(p, hidden))
    b = rng.uniform(-1.0, 1.0, size=hidden)
    return W, b


def hidden_matrix(X, W, b, activation: str = "sigmoid") -> np.ndarray:
    with np.errstate(over="ignore"):
        H = ACTIVATIONS[activation](np.asarray(X, dtype=float) @ W + b)
    if not np.isfinite(H).all():
        raise FloatingPointError("non-finite hidden-layer activation")
    return H


def pinv_solve(H, y, rcond: float = RCOND) -> np.ndarray:
    """Minimum-norm least-squares solution via SVD.

    Singular values below ``rcond * s_max`` are treated as zero.  One step
    of iterative refinement on the residual recovers accuracy lost to
    rounding when ``H`` is ill-conditioned; the correction stays in the row
    space of ``H`` so the result is still minimum-norm.
    """
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    keep = s > rcond * s[0] if len(s) and s[0] > 0 else np.zeros(len(s), dtype=bool)
    U, s, V = U[:, keep], s[keep], Vt[keep].T
    beta = V @ ((U.T @ y) / s)
    return beta + V @ ((U.T @ (y - H @ beta)) / s)


@dataclass(frozen=True)
class ElmModel:
    W: np.ndarray
    b: np.ndarray
    beta: np.ndarray
    activation: str
    seed: int

    @property
    def hidden(self) -> int:
        return len(self.b)

    def predict(self, X) -> np.ndarray:
        return predict_elm(self, X)

    def to_dict(self) -> dict:
        # W and b are regenerated from the seed on load
        return {"type": "elm", "seed": self.seed, "hidden": self.hidden, "n_features": self.W.shape[0],
                "activation": self.activation, "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d) -> "ElmModel":
        W, b = random_layer(d["n_features"], d["hidden"], d["seed"])
        return cls(W, b, np.asarray(d["beta"], float), d["activation"], d["seed"])


def fit_elm(X, y, hidden: int | None = None, activation: str = "sigmoid", seed: int = 0) -> ElmModel:
    """Random sigmoid hidden layer, output weights ``beta = pinv(H) @ y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
    hidden = default_hidden(len(y)) if hidden is None else int(hidden)
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    W, b = random_layer(X.shape[1], hidden, seed)
    H = hidden_matrix(X, W, b, activation)
    return ElmModel(W, b, pinv_solve(H, y), activation, int(seed))


def predict_elm(model: ElmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.W.shape[0]:
        raise ValueError(f"expected {model.W.shape[0]} columns, got shape {X.shape}")
    return hidden_matrix(X, model.W, model.b, model.activation) @ model.beta
