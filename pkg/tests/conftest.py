import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def two_bumps(n=1000, seed=0, heights=(1.0, 0.6), centers=((-2.0, 0.0), (2.0, 0.0)), width=0.8):
    """Points in 2-D scored by a sum of two Gaussian bumps.

    Returns (X, y, truth) where ``truth`` is the bump each point flows to
    under exact gradient ascent of the analytic function.
    """
    r = np.random.default_rng(seed)
    X = r.uniform([-4.5, -2.5], [4.5, 2.5], size=(n, 2))
    y = bump_value(X, heights, centers, width)
    truth = ascent_basin(X, heights, centers, width)
    return X, y, truth


def bump_value(X, heights, centers, width):
    out = np.zeros(len(X))
    for h, c in zip(heights, centers):
        out += h * np.exp(-((X - np.asarray(c)) ** 2).sum(axis=1) / (2 * width**2))
    return out


def ascent_basin(X, heights, centers, width, step=0.05, iters=4000):
    """Integrate the analytic gradient flow from every point to its mode."""
    P = np.array(X, dtype=float)
    C = np.asarray(centers, dtype=float)
    for _ in range(iters):
        g = np.zeros_like(P)
        for h, c in zip(heights, C):
            w = h * np.exp(-((P - c) ** 2).sum(axis=1) / (2 * width**2))
            g += w[:, None] * (c - P) / width**2
        P += step * g / max(1.0, np.abs(g).max())
    d = ((P[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)
