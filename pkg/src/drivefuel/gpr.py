"""Exact Gaussian process regression with a Matérn 5/2 kernel and a constant
mean basis.

Hyperparameters are stored as ``theta = (log sigma_f, log sigma_l)`` plus
the noise variance. Training maximizes the log marginal likelihood. The
mean coefficient and the signal variance have closed-form optima, so the
search runs over the length scale (multi-start, derivative-free) with a
1-D noise-ratio search nested inside, both on one eigendecomposition of
the unit-amplitude kernel per length scale.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

from .stats_analysis import DcorrResult, goodness

SQRT5 = math.sqrt(5.0)
FORMAT_VERSION = "drivefuel-gpr/1"
DEFAULT_JITTER = 1e-8


class GPRError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainOptions:
    restarts: int = 8
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    log_length_bounds: tuple[float, float] = (math.log(0.05), math.log(20.0))
    log_ratio_bounds: tuple[float, float] = (math.log(1e-8), math.log(10.0))


@dataclass(frozen=True)
class GPRModel:
    theta1: float  # log sigma_f
    theta2: float  # log sigma_l
    noise_var: float
    beta: float
    train_inputs: np.ndarray  # standardized
    alpha_vec: np.ndarray
    feature_means: np.ndarray
    feature_scales: np.ndarray
    feature_names: tuple[str, ...] = ()
    jitter: float = DEFAULT_JITTER
    log_ml: float = math.nan

    @property
    def sigma_f(self) -> float:
        return math.exp(self.theta1)

    @property
    def sigma_l(self) -> float:
        return math.exp(self.theta2)

    def standardize(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.train_inputs.shape[1]:
            raise GPRError(f"expected {self.train_inputs.shape[1]} features, got {X.shape[1]}")
        return (X - self.feature_means) / self.feature_scales

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


@dataclass(frozen=True)
class CvReport:
    folds: int
    fold_r_square: tuple[float, ...]
    fold_rmse: tuple[float, ...]
    r_square: float
    rmse: float
    predictions: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise GPRError("features must be a 1-D or 2-D array")
    return X


def _matern_from_dist(r: np.ndarray, sigma_f: float, sigma_l: float) -> np.ndarray:
    z = SQRT5 * r / sigma_l
    return sigma_f * sigma_f * (1.0 + z + z * z / 3.0) * np.exp(-z)


def matern52(x, x2, sigma_f: float, sigma_l: float) -> float:
    """Matérn 5/2 covariance between two feature vectors."""
    x, x2 = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(x2, float))
    if x.shape != x2.shape:
        raise GPRError("feature vectors must have equal dimensions")
    r = float(np.sqrt(np.sum((x - x2) ** 2)))
    return float(_matern_from_dist(np.asarray(r), sigma_f, sigma_l))


def cross_kernel(X1, X2, sigma_f: float, sigma_l: float) -> np.ndarray:
    return _matern_from_dist(cdist(_as_matrix(X1), _as_matrix(X2)), sigma_f, sigma_l)


def kernel_matrix(X, sigma_f: float, sigma_l: float, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    X = _as_matrix(X)
    K = cross_kernel(X, X, sigma_f, sigma_l)
    K[np.diag_indices_from(K)] += jitter
    return K


def _factor(K: np.ndarray, jitter: float):
    """Cholesky factor of K; on failure add ``jitter`` once more (doubling it)."""
    try:
        return cho_factor(K, lower=True)
    except LinAlgError:
        K = K.copy()
        K[np.diag_indices_from(K)] += jitter
        try:
            return cho_factor(K, lower=True)
        except LinAlgError as exc:
            raise GPRError("covariance matrix is not positive definite") from exc


def log_marginal_likelihood(X, Y, beta: float, theta: Sequence[float], sigma: float,
                            jitter: float = DEFAULT_JITTER) -> float:
    """Log marginal likelihood of ``Y`` for mean ``beta`` and hyperparameters
    ``theta = (log sigma_f, log sigma_l)`` and noise standard deviation ``sigma``."""
    X, Y = _as_matrix(X), np.asarray(Y, float)
    n = Y.size
    K = kernel_matrix(X, math.exp(theta[0]), math.exp(theta[1]), jitter)
    K[np.diag_indices_from(K)] += sigma * sigma
    c = _factor(K, jitter)
    resid = Y - beta
    quad = resid @ cho_solve(c, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * quad - 0.5 * n * math.log(2.0 * math.pi) - 0.5 * logdet)


def gls_beta(X, Y, theta: Sequence[float], sigma: float, jitter: float = DEFAULT_JITTER) -> float:
    """Generalized least-squares mean for fixed hyperparameters."""
    X, Y = _as_matrix(X), np.asarray(Y, float)
    K = kernel_matrix(X, math.exp(theta[0]), math.exp(theta[1]), jitter)
    K[np.diag_indices_from(K)] += sigma * sigma
    c = _factor(K, jitter)
    ones = np.ones(Y.size)
    w = cho_solve(c, ones)
    return float(w @ Y / (w @ ones))


class _LengthProfile:
    """Profiled log-likelihood for one length scale.

    With the unit-amplitude kernel C = U diag(d) U^T and total diagonal
    ratio lam = (sigma^2 + jitter) / sigma_f^2, both beta and sigma_f^2 are
    closed form, leaving a 1-D search over lam.
    """

    def __init__(self, D: np.ndarray, Y: np.ndarray, log_length: float):
        C = _matern_from_dist(D, 1.0, math.exp(log_length))
        d, U = np.linalg.eigh(C)
        self.d = np.maximum(d, 0.0)
        self.u1 = U.T @ np.ones(Y.size)
        self.uy = U.T @ Y
        self.n = Y.size
        self.floor = 1e-12 * max(1.0, float(np.mean(Y * Y)))

    def evaluate(self, log_ratio: float) -> tuple[float, float, float]:
        """Return (log ML, beta, sigma_f^2) at the given noise ratio."""
        w = 1.0 / (self.d + math.exp(log_ratio))
        beta = float(np.sum(w * self.u1 * self.uy) / np.sum(w * self.u1 * self.u1))
        res = self.uy - beta * self.u1
        s2 = max(float(np.sum(w * res * res)) / self.n, self.floor)
        quad = float(np.sum(w * res * res)) / s2
        logdet = self.n * math.log(s2) - float(np.sum(np.log(w)))
        lml = -0.5 * quad - 0.5 * self.n * math.log(2.0 * math.pi) - 0.5 * logdet
        return lml, beta, s2

    def best_ratio(self, bounds: tuple[float, float]) -> tuple[float, float]:
        grid = np.linspace(bounds[0], bounds[1], 25)
        vals = [self.evaluate(g)[0] for g in grid]
        k = int(np.argmax(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        res = minimize_scalar(lambda g: -self.evaluate(g)[0], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-4})
        if -res.fun >= vals[k]:
            return float(res.x), float(-res.fun)
        return float(grid[k]), float(vals[k])


def standardization(X) -> tuple[np.ndarray, np.ndarray]:
    X = _as_matrix(X)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    return means, np.where(scales > 0, scales, 1.0)


def fit_fixed(X_raw, Y, theta: Sequence[float], noise_var: float, beta: float | None = None,
              means=None, scales=None, feature_names: Sequence[str] = (),
              jitter: float = DEFAULT_JITTER) -> GPRModel:
    """Build a model at given hyperparameters (no optimization).

    ``beta`` defaults to the generalized least-squares value.
    """
    X_raw, Y = _as_matrix(X_raw), np.asarray(Y, float)
    if means is None or scales is None:
        means, scales = standardization(X_raw)
    means, scales = np.asarray(means, float), np.asarray(scales, float)
    Xs = (X_raw - means) / scales
    sigma = math.sqrt(noise_var)
    if beta is None:
        beta = gls_beta(Xs, Y, theta, sigma, jitter)
    K = kernel_matrix(Xs, math.exp(theta[0]), math.exp(theta[1]), jitter)
    K[np.diag_indices_from(K)] += noise_var
    alpha = cho_solve(_factor(K, jitter), Y - beta)
    lml = log_marginal_likelihood(Xs, Y, beta, theta, sigma, jitter)
    return GPRModel(float(theta[0]), float(theta[1]), float(noise_var), float(beta), Xs, alpha,
                    means, scales, tuple(feature_names), jitter, lml)


def train(X_raw, Y, opts: TrainOptions = TrainOptions(), feature_names: Sequence[str] = ()) -> GPRModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Start points for the log length scale are drawn uniformly within
    ``opts.log_length_bounds`` from a generator seeded by ``opts.seed``; the
    best start is refined by a bounded Brent search between its neighbouring
    start points.
    """
    X_raw, Y = _as_matrix(X_raw), np.asarray(Y, float)
    if Y.size < 5 or X_raw.shape[0] != Y.size:
        raise GPRError("need at least 5 training points with matching features")
    means, scales = standardization(X_raw)
    Xs = (X_raw - means) / scales
    D = cdist(Xs, Xs)
    lo, hi = opts.log_length_bounds
    rng = np.random.default_rng(opts.seed)
    starts = np.sort(rng.uniform(lo, hi, max(opts.restarts, 1)))
    cache: dict[float, tuple[float, float]] = {}

    def profile(log_len: float) -> float:
        key = float(log_len)
        if key not in cache:
            cache[key] = _LengthProfile(D, Y, key).best_ratio(opts.log_ratio_bounds)
        return cache[key][1]

    start_vals = np.array([profile(s) for s in starts])
    if not np.any(np.isfinite(start_vals)):
        raise GPRError(f"likelihood not finite at any start point: {starts.tolist()}")
    k = int(np.nanargmax(start_vals))
    a = starts[k - 1] if k > 0 else lo
    b = starts[k + 1] if k + 1 < starts.size else hi
    res = minimize_scalar(lambda g: -profile(g), bounds=(a, b), method="bounded", options={"xatol": 1e-3})
    best_len = float(res.x) if -res.fun >= start_vals[k] else float(starts[k])
    profile(best_len)
    log_ratio = cache[best_len][0]
    _, beta, sigma_f2 = _LengthProfile(D, Y, best_len).evaluate(log_ratio)
    noise_var = max(math.exp(log_ratio) * sigma_f2 - opts.jitter, 0.0)
    theta = (0.5 * math.log(sigma_f2), best_len)
    return fit_fixed(X_raw, Y, theta, noise_var, beta, means, scales, feature_names, opts.jitter)


def predict(model: GPRModel, X_new) -> np.ndarray:
    """Posterior mean at ``X_new`` (raw feature units)."""
    Xs = model.standardize(X_new)
    Ks = cross_kernel(Xs, model.train_inputs, model.sigma_f, model.sigma_l)
    return model.beta + Ks @ model.alpha_vec


def select_features(dcorr_table: dict[str, DcorrResult], threshold: float = 0.05) -> list[str]:
    """Names with p < threshold, in table order; the highest-r name is always kept."""
    if not dcorr_table:
        raise GPRError("empty correlation table")
    best = max(dcorr_table, key=lambda k: dcorr_table[k].r)
    return [k for k, res in dcorr_table.items() if res.p_value < threshold or k == best]


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def cross_validate(X, Y, k: int = 5, seed: int = 0, opts: TrainOptions = TrainOptions()) -> CvReport:
    """Shuffled k-fold CV; the aggregate metrics pool all held-out predictions.

    Per-fold R^2 is NaN for a held-out fold with constant targets (e.g. a
    single point under leave-one-out).
    """
    X, Y = _as_matrix(X), np.asarray(Y, float)
    n = Y.size
    if k < 2 or n < k:
        raise GPRError(f"need 2 <= k <= n, got k={k}, n={n}")
    if n - math.ceil(n / k) < 2:
        raise GPRError("training folds would have fewer than 2 points")
    pred = np.empty(n)
    r2s, rmses = [], []
    for held in kfold_indices(n, k, seed):
        train_mask = np.ones(n, bool)
        train_mask[held] = False
        model = train(X[train_mask], Y[train_mask], opts)
        pred[held] = predict(model, X[held])
        resid = Y[held] - pred[held]
        rmses.append(float(np.sqrt(np.mean(resid ** 2))))
        r2s.append(goodness(pred[held], Y[held])[0] if np.ptp(Y[held]) > 0 else math.nan)
    r2, rmse = goodness(pred, Y)
    return CvReport(k, tuple(r2s), tuple(rmses), r2, rmse, pred)


def save_model(model: GPRModel, path: str | Path) -> None:
    doc = {
        "format": FORMAT_VERSION,
        "feature_names": list(model.feature_names),
        "feature_means": [repr(float(v)) for v in model.feature_means],
        "feature_scales": [repr(float(v)) for v in model.feature_scales],
        "theta1": repr(model.theta1),
        "theta2": repr(model.theta2),
        "noise_var": repr(model.noise_var),
        "beta": repr(model.beta),
        "jitter": repr(model.jitter),
        "log_ml": repr(model.log_ml),
        "train_inputs": [[repr(float(v)) for v in row] for row in model.train_inputs],
        "alpha_vec": [repr(float(v)) for v in model.alpha_vec],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GPRModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_VERSION:
        raise GPRError(f"unsupported model format {doc.get('format')!r}")
    arr = lambda xs: np.array([float(v) for v in xs])  # noqa: E731
    return GPRModel(
        float(doc["theta1"]), float(doc["theta2"]), float(doc["noise_var"]), float(doc["beta"]),
        np.array([[float(v) for v in row] for row in doc["train_inputs"]]),
        arr(doc["alpha_vec"]), arr(doc["feature_means"]), arr(doc["feature_scales"]),
        tuple(doc["feature_names"]), float(doc["jitter"]), float(doc["log_ml"]),
    )
