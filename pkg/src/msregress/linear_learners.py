"""Penalized and boosted linear regressors.

All fits centre the design and outcome internally and report an explicit
intercept, so predictions are always ``intercept + X @ coefficients``.
The penalty level ``lam`` is on the per-observation scale, i.e. the loss
is ``(1/2n) ||y - X b||^2``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset_io import interaction_matrix

logger = logging.getLogger(__name__)

CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000


class CollinearityWarning(UserWarning):
    pass


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@njit(cache=True)
def _cd_gram(G, c, beta, lam, alpha, tol, max_sweeps):
    p = len(c)
    q = G @ beta
    l1 = lam * (1.0 - alpha)
    l2 = 2.0 * lam * alpha
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            denom = G[j, j] + l2
            old = beta[j]
            if denom <= 0.0:
                new = 0.0
            else:
                rho = c[j] - q[j] + G[j, j] * old
                if rho > l1:
                    new = (rho - l1) / denom
                elif rho < -l1:
                    new = (rho + l1) / denom
                else:
                    new = 0.0
            d = new - old
            if d != 0.0:
                for k in range(p):
                    q[k] += G[k, j] * d
                beta[j] = new
                if abs(d) > delta:
                    delta = abs(d)
        if delta < tol:
            break
    return beta


@njit(cache=True)
def _cd_path(G, c, lambdas, alpha, tol, max_sweeps):
    p = len(c)
    out = np.zeros((len(lambdas), p))
    beta = np.zeros(p)
    for i in range(len(lambdas)):
        beta = _cd_gram(G, c, beta, lambdas[i], alpha, tol, max_sweeps)
        out[i] = beta
    return out


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    lam: float = 0.0
    alpha: float = 0.5
    interactions: bool = False

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def to_dict(self) -> dict:
        return {"type": "elastic_net", "intercept": self.intercept, "coefficients": self.coefficients.tolist(),
                "lambda": self.lam, "alpha": self.alpha, "interactions": self.interactions}

    @classmethod
    def from_dict(cls, d):
        return cls(d["intercept"], np.asarray(d["coefficients"], float), d["lambda"], d["alpha"],
                   d.get("interactions", False))


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in X or y")
    return X, y


def elastic_net_objective(X, y, intercept, beta, lam, alpha) -> float:
    r = y - intercept - X @ beta
    return r @ r / (2 * len(y)) + lam * (alpha * beta @ beta + (1 - alpha) * np.abs(beta).sum())


def _moments(X, y):
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    n = len(y)
    return xm, ym, Xc.T @ Xc / n, Xc.T @ (y - ym) / n


def lambda_max(X, y, alpha: float) -> float:
    X, y = _check_xy(X, y)
    c = (X - X.mean(axis=0)).T @ (y - y.mean()) / len(y)
    return float(np.abs(c).max() / max(1.0 - alpha, 1e-3))


def lambda_grid(lam_max: float, n_lambda: int = 100, decades: float = 4.0) -> np.ndarray:
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.logspace(0.0, -decades, n_lambda)


def _fold_ids(n: int, n_folds: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n) % n_folds


def fit_elastic_net(X, y, alpha: float = 0.5, lam: float | None = None, n_folds: int = 10,
                    seed: int = 0, n_lambda: int = 100) -> LinearModel:
    """Elastic net by cyclic coordinate descent with soft-thresholding.

    Minimizes ``(1/2n)||y - a - X b||^2 + lam * (alpha ||b||^2 + (1 - alpha) ||b||_1)``.
    With ``lam=None`` the penalty is picked by ``n_folds``-fold CV over a
    log grid of ``n_lambda`` values spanning four decades below the
    smallest penalty that zeroes every coefficient.
    """
    X, y = _check_xy(X, y)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    n, p = X.shape
    if n < 2:
        raise ValueError("elastic net needs at least two observations")
    xm, ym, G, c = _moments(X, y)
    if lam is None:
        grid = lambda_grid(float(np.abs(c).max() / max(1.0 - alpha, 1e-3)), n_lambda)
        lam = _cv_lambda(X, y, alpha, grid, n_folds, seed)
    beta = _cd_gram(G, c, np.zeros(p), float(lam), float(alpha), CD_TOL, CD_MAX_SWEEPS)
    return LinearModel(float(ym - xm @ beta), beta.copy(), float(lam), float(alpha))


def _cv_lambda(X, y, alpha, grid, n_folds, seed):
    n = len(y)
    folds = n_folds if n >= n_folds else 3
    if n < folds or n < 6:
        # Too few rows to cross-validate at all.
        return float(grid[len(grid) // 2])
    fold_of = _fold_ids(n, folds, seed)
    err = np.zeros(len(grid))
    for f in range(folds):
        tr, te = fold_of != f, fold_of == f
        xm, ym, G, c = _moments(X[tr], y[tr])
        path = _cd_path(G, c, grid, float(alpha), CD_TOL, CD_MAX_SWEEPS)
        pred = ym + (X[te] - xm) @ path.T
        err += ((y[te, None] - pred) ** 2).sum(axis=0)
    return float(grid[int(np.argmin(err))])


@dataclass
class LassoPath:
    """Piecewise-linear LASSO solution path.

    ``lambdas`` strictly decrease; ``coefs[k]`` is the solution at
    ``lambdas[k]`` and ``actives[k]`` the active set entering the segment
    that starts there.
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    actives: list
    x_mean: np.ndarray
    y_mean: float
    chosen: int = -1
    interactions: bool = False
    dropped: list = field(default_factory=list)

    def coef_at(self, lam: float) -> np.ndarray:
        lams = self.lambdas
        if lam >= lams[0]:
            return self.coefs[0].copy()
        if lam <= lams[-1]:
            return self.coefs[-1].copy()
        k = int(np.searchsorted(-lams, -lam, side="right")) - 1
        t = (lams[k] - lam) / (lams[k] - lams[k + 1])
        return (1 - t) * self.coefs[k] + t * self.coefs[k + 1]

    def intercept_for(self, beta) -> float:
        return float(self.y_mean - self.x_mean @ beta)

    @property
    def coefficients(self) -> np.ndarray:
        return self.coefs[self.chosen]

    @property
    def intercept(self) -> float:
        return self.intercept_for(self.coefficients)

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def to_dict(self) -> dict:
        return {"type": "lasso_path", "lambdas": self.lambdas.tolist(), "coefs": self.coefs.tolist(),
                "actives": [list(map(int, a)) for a in self.actives], "x_mean": self.x_mean.tolist(),
                "y_mean": self.y_mean, "chosen": self.chosen, "interactions": self.interactions,
                "intercept": self.intercept, "dropped": list(map(int, self.dropped))}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lambdas"], float), np.asarray(d["coefs"], float), d["actives"],
                   np.asarray(d["x_mean"], float), d["y_mean"], d["chosen"], d.get("interactions", False),
                   d.get("dropped", []))


def lasso_homotopy_path(X, y, tol: float = 1e-12) -> LassoPath:
    """Exact LASSO path by active-set homotopy (LARS with the lasso modification).

    Starting from the all-zero solution at the smallest penalty that kills
    every coefficient, the active set changes by one variable per
    breakpoint: a variable enters when its correlation with the residual
    reaches the penalty level and leaves when its coefficient crosses zero.
    Variables whose addition would make the active Gram matrix singular are
    skipped (with a warning).
    """
    X, y = _check_xy(X, y)
    n, p = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    yc = y - ym
    max_active = min(n - 1, p)
    G = Xc.T @ Xc / n
    xty = Xc.T @ yc / n
    beta = np.zeros(p)
    corr = xty.copy()
    lam = float(np.abs(corr).max()) if p else 0.0
    scale = max(lam, 1e-300)
    active: list[int] = []
    excluded: set[int] = set()
    lambdas, coefs, actives = [lam], [beta.copy()], []
    if lam <= tol:
        return LassoPath(np.array([0.0]), np.zeros((1, p)), [[]], xm, float(ym))

    def try_enter(j):
        cand = active + [j]
        eig = np.linalg.eigvalsh(G[np.ix_(cand, cand)])
        if eig[0] <= 1e-10 * max(eig[-1], 1e-300):
            excluded.add(j)
            warnings.warn(f"column {j} is collinear with the active set; dropped", CollinearityWarning,
                          stacklevel=3)
            return False
        active.append(j)
        return True

    # initial entry: the most correlated column (lowest index on ties)
    for j in np.lexsort((np.arange(p), -np.abs(corr))):
        if abs(corr[j]) < lam - 1e-12 * scale:
            break
        if try_enter(int(j)):
            break
    if not active:
        return LassoPath(np.array([lam]), np.zeros((1, p)), [[]], xm, float(ym), dropped=sorted(excluded))

    while lam > 0:
        A = np.array(active)
        s = np.sign(corr[A])
        d = np.linalg.solve(G[np.ix_(A, A)], s)
        a = G[:, A] @ d
        gamma, event, who = lam, "end", -1
        if len(active) < max_active:
            free = np.ones(p, dtype=bool)
            free[A] = False
            if excluded:
                free[list(excluded)] = False
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = (lam - corr) / (1 - a)
                g2 = (lam + corr) / (1 + a)
            g = np.where(free[:, None], np.column_stack([g1, g2]), np.inf)
            g = np.where((g > tol * scale) & np.isfinite(g), g, np.inf).min(axis=1)
            j = int(np.argmin(g))
            if g[j] < gamma:
                gamma, event, who = float(g[j]), "enter", j
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(d != 0, -beta[A] / d, np.inf)
        g = np.where(g > tol * scale, g, np.inf)
        pos = int(np.argmin(g))
        if g[pos] < gamma:
            gamma, event, who = float(g[pos]), "leave", int(A[pos])
        beta[A] += gamma * d
        lam = lam - gamma
        if event == "end" or lam <= tol * scale:
            lam = 0.0
        actives.append(list(active))
        if event == "leave":
            beta[who] = 0.0
            active.remove(who)
        corr = xty - G @ beta
        if event == "enter":
            try_enter(who)
        lambdas.append(lam)
        coefs.append(beta.copy())
        if not active:
            break
    actives.append(list(active))
    path = LassoPath(np.array(lambdas), np.array(coefs), actives, xm, float(ym), dropped=sorted(excluded))
    path.chosen = len(lambdas) - 1
    return path


def kkt_residuals(path: LassoPath, X, y) -> np.ndarray:
    """Worst KKT violation at every breakpoint.

    Active columns must have ``|x_j' r| / n == lam``; inactive columns
    ``<= lam``.
    """
    X, y = _check_xy(X, y)
    n = len(y)
    Xc = X - path.x_mean
    yc = y - path.y_mean
    out = []
    for k, (lam, beta) in enumerate(zip(path.lambdas, path.coefs)):
        corr = np.abs(Xc.T @ (yc - Xc @ beta) / n)
        on = beta != 0
        worst = 0.0
        if on.any():
            worst = np.abs(corr[on] - lam).max()
        if (~on).any():
            worst = max(worst, max(0.0, (corr[~on] - lam).max()))
        out.append(worst)
    return np.array(out)


def fit_lasso_homotopy(X, y, n_folds: int = 10, seed: int = 0, with_interactions: bool = False,
                       lam: float | None = None) -> LassoPath:
    """Homotopy LASSO path with the solution chosen by k-fold CV over its breakpoints.

    ``lam`` fixes the chosen point to the nearest breakpoint instead.
    """
    X, y = _check_xy(X, y)
    if with_interactions:
        X = interaction_matrix(X)
    path = lasso_homotopy_path(X, y)
    path.interactions = with_interactions
    n = len(y)
    if lam is not None:
        path.chosen = int(np.argmin(np.abs(path.lambdas - lam)))
        return path
    folds = n_folds if n >= n_folds else 3
    if n < max(folds, 6) or len(path.lambdas) == 1:
        return path
    fold_of = _fold_ids(n, folds, seed)
    err = np.zeros(len(path.lambdas))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CollinearityWarning)
        for f in range(folds):
            tr, te = fold_of != f, fold_of == f
            sub = lasso_homotopy_path(X[tr], y[tr])
            B = np.array([sub.coef_at(l) for l in path.lambdas])
            pred = sub.y_mean + (X[te] - sub.x_mean) @ B.T
            err += ((y[te, None] - pred) ** 2).sum(axis=0)
    path.chosen = int(np.argmin(err))
    return path


@dataclass(frozen=True)
class BoostedModel:
    """Componentwise linear boosting fit.

    ``features[m]`` is the column picked at iteration ``m`` and ``steps[m]``
    the already-shrunk coefficient added for it; ``centers`` holds the
    training column means the base learners were fit around.
    """

    offset: float
    features: np.ndarray
    steps: np.ndarray
    centers: np.ndarray
    nu: float
    interactions: bool = False

    @property
    def m_stop(self) -> int:
        return len(self.features)

    @property
    def coefficients(self) -> np.ndarray:
        coef = np.zeros(len(self.centers))
        np.add.at(coef, self.features, self.steps)
        return coef

    @property
    def intercept(self) -> float:
        return float(self.offset - self.coefficients @ self.centers)

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def to_dict(self) -> dict:
        return {"type": "boosted", "offset": self.offset, "features": self.features.tolist(),
                "steps": self.steps.tolist(), "centers": self.centers.tolist(), "nu": self.nu,
                "interactions": self.interactions, "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d):
        return cls(d["offset"], np.asarray(d["features"], dtype=np.int64), np.asarray(d["steps"], float),
                   np.asarray(d["centers"], float), d["nu"], d.get("interactions", False))


def fit_boosted_linear(X, y, m_stop: int = 500, nu: float = 0.1, with_interactions: bool = False) -> BoostedModel:
    """L2 boosting with single-column least-squares base learners.

    Each iteration regresses the current residual on every (centred)
    column separately, keeps the column with the smallest residual sum of
    squares, and adds ``nu`` times its coefficient.
    """
    X, y = _check_xy(X, y)
    if m_stop < 1:
        raise ValueError("m_stop must be >= 1")
    if not 0.0 < nu <= 1.0:
        raise ValueError("nu must lie in (0, 1]")
    if with_interactions:
        X = interaction_matrix(X)
    centers = X.mean(axis=0)
    Xc = X - centers
    norms = (Xc**2).sum(axis=0)
    usable = norms > 1e-12 * max(norms.max(), 1e-300)
    offset = float(y.mean())
    r = y - offset
    feats = np.empty(m_stop, dtype=np.int64)
    steps = np.empty(m_stop)
    for m in range(m_stop):
        xr = Xc.T @ r
        # RSS of a single-column fit is ||r||^2 - (x'r)^2 / ||x||^2
        gain = np.where(usable, xr**2 / np.where(usable, norms, 1.0), -np.inf)
        j = int(np.argmax(gain))
        b = xr[j] / norms[j] if usable[j] else 0.0
        feats[m] = j
        steps[m] = nu * b
        r = r - steps[m] * Xc[:, j]
    return BoostedModel(offset, feats, steps, centers, float(nu), with_interactions)


def predict_linear(model, X) -> np.ndarray:
    """Affine prediction for any of the linear model types."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if getattr(model, "interactions", False):
        X = interaction_matrix(X)
    coef = model.coefficients
    if X.shape[1] != len(coef):
        raise ValueError(f"expected {len(coef)} model columns, got {X.shape[1]}")
    return model.intercept + X @ coef


def linear_from_dict(d: dict):
    return {"elastic_net": LinearModel, "lasso_path": LassoPath, "boosted": BoostedModel}[d["type"]].from_dict(d)
