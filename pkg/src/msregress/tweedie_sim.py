"""Simulated regression data with Tweedie-distributed outcomes.

Outcomes have mean ``mu`` and variance ``phi * mu**xi``:

* ``xi = 1``: ``phi * N`` with ``N ~ Poisson(mu / phi)``
* ``1 < xi < 2``: compound Poisson-gamma sum
* ``xi = 2``: ``Gamma(shape=1/phi, scale=phi*mu)``

Predictors are i.i.d. standard normal; the first four drive a log-linked
mean and the rest are noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset_io import Dataset

RELATIONSHIPS = ("linear", "nonlinear", "mixed")
MU_CLIP = (1e-3, 1e3)


@dataclass(frozen=True)
class SimConfig:
    xi: float = 1.5
    phi: float = 1.0
    relationship: str = "linear"
    n: int = 10_000
    p_true: int = 4
    p_noise: int = 11
    seed: int = 0

    def __post_init__(self):
        _check_params(self.phi, self.xi)
        if self.relationship not in RELATIONSHIPS:
            raise ValueError(f"relationship must be one of {RELATIONSHIPS}, got {self.relationship!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.p_true < 4:
            raise ValueError("the mean functions use four true predictors")
        if self.p_noise < 0:
            raise ValueError("p_noise must be >= 0")

    @property
    def p(self) -> int:
        return self.p_true + self.p_noise

    @property
    def cell(self) -> str:
        return f"{self.relationship}/xi={self.xi:g}/phi={self.phi:g}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_function"] = MEAN_FORMULAS[self.relationship]
        d["link"] = "log"
        d["mu_clip"] = list(MU_CLIP)
        d["predictors"] = "iid standard normal"
        return d


MEAN_FORMULAS = {
    "linear": "0.5*x1 + 0.4*x2 + 0.3*x3 + 0.2*x4",
    "nonlinear": "0.5*sin(pi*x1) + 0.4*x2^2/2 + 0.3*x3*x4 + 0.2*|x4|",
    "mixed": "0.5*x1 + 0.4*x2 + 0.3*sin(pi*x3) + 0.2*x3*x4",
}


def _check_params(phi, xi):
    if not phi > 0:
        raise ValueError(f"dispersion phi must be > 0, got {phi}")
    if not 1.0 <= xi <= 2.0:
        raise ValueError(f"Tweedie power xi must lie in [1, 2], got {xi}")


def make_predictors(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((config.n, config.p))


def linear_predictor(X, relationship: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 4:
        raise ValueError("mean functions need at least four columns")
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    if relationship == "linear":
        return 0.5 * x1 + 0.4 * x2 + 0.3 * x3 + 0.2 * x4
    if relationship == "nonlinear":
        return 0.5 * np.sin(np.pi * x1) + 0.4 * x2**2 / 2 + 0.3 * x3 * x4 + 0.2 * np.abs(x4)
    if relationship == "mixed":
        return 0.5 * x1 + 0.4 * x2 + 0.3 * np.sin(np.pi * x3) + 0.2 * x3 * x4
    raise ValueError(f"unknown relationship {relationship!r}")


def mean_function(X, relationship: str) -> np.ndarray:
    return np.clip(np.exp(linear_predictor(X, relationship)), *MU_CLIP)


def compound_poisson_params(mu, phi, xi):
    """Poisson rate and gamma (shape, scale) of the compound Poisson-gamma form, 1 < xi < 2."""
    mu = np.asarray(mu, dtype=float)
    rate = mu ** (2 - xi) / (phi * (2 - xi))
    shape = (2 - xi) / (xi - 1)
    scale = phi * (xi - 1) * mu ** (xi - 1)
    return rate, shape, scale


def sample_tweedie(mu, phi: float, xi: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw Tweedie variates with mean ``mu`` and variance ``phi * mu**xi``.

    ``mu`` may be an array (one draw per entry) or a scalar with ``size``.
    """
    _check_params(phi, xi)
    mu = np.asarray(mu, dtype=float)
    if size is not None:
        mu = np.broadcast_to(mu, size)
    if not (mu > 0).all():
        raise ValueError("mu must be > 0")
    if xi == 1.0:
        return phi * rng.poisson(mu / phi).astype(float)
    if xi == 2.0:
        return rng.gamma(1.0 / phi, phi * mu)
    rate, shape, scale = compound_poisson_params(mu, phi, xi)
    counts = rng.poisson(rate)
    out = np.zeros(mu.shape)
    hit = counts > 0
    # a sum of N i.i.d. Gamma(k, s) variates is Gamma(N k, s)
    out[hit] = rng.gamma(counts[hit] * shape, np.broadcast_to(scale, mu.shape)[hit])
    return out


def simulate_dataset(config: SimConfig) -> Dataset:
    rng = np.random.default_rng(config.seed)
    X = make_predictors(config, rng)
    y = sample_tweedie(mean_function(X, config.relationship), config.phi, config.xi, rng)
    names = tuple(f"x{j + 1}" for j in range(config.p))
    return Dataset(X, y, names, "y")


def write_sidecar(config: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def paper_grid(n: int = 10_000, seed: int = 0) -> list[SimConfig]:
    """The 3 relationships x 3 Tweedie powers x 3 dispersions design."""
    return [SimConfig(xi, phi, rel, n, seed=seed)
            for rel in RELATIONSHIPS for xi in (1.0, 1.5, 2.0) for phi in (1.0, 2.0, 4.0)]
