"""Dependence and fit statistics for campaign datasets.

Distance correlation is computed from double-centred distance matrices,
with a permutation test for significance. Also here: the quintic fuel
model in maximum acceleration, goodness-of-fit metrics, histograms and
the KL divergence used to compare predicted and observed distributions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit
from numpy.polynomial import Polynomial

from .mc_engine import CampaignDataset

KL_EPS = 1e-12


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class DcorrResult:
    r: float
    p_value: float
    n: int
    pearson_sign: int = 0


@dataclass(frozen=True)
class QuinticModel:
    """Quintic in maximum acceleration.

    ``coeffs`` are z1..z6 in the raw variable (a^5 first). Evaluation uses
    ``u_coeffs``, the same polynomial in ``u = (a - center) / scale``.
    """

    coeffs: tuple[float, ...]
    r_square: float
    rmse: float
    center: float = 0.0
    scale: float = 1.0
    u_coeffs: tuple[float, ...] = ()

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if not self.u_coeffs:
            return np.polyval(self.coeffs, a)
        return Polynomial(self.u_coeffs)((a - self.center) / self.scale)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.edges) <= 0):
            raise StatsError("histogram edges must be strictly increasing")
        if self.probs.size != self.edges.size - 1:
            raise StatsError("need len(probs) == len(edges) - 1")


def _centered_distances(x: np.ndarray) -> np.ndarray:
    d = np.abs(x[:, None] - x[None, :])
    row = d.mean(axis=1)
    return d - row[:, None] - row[None, :] + row.mean()


def _as_sample(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise StatsError(f"{name} must be one-dimensional")
    return arr


def distance_correlation(x, y) -> float:
    """Sample distance correlation of two real sequences, in [0, 1]."""
    x, y = _as_sample(x, "X"), _as_sample(y, "Y")
    if x.size != y.size or x.size < 2:
        raise StatsError("X and Y need equal lengths >= 2")
    A, B = _centered_distances(x), _centered_distances(y)
    vxx, vyy = np.mean(A * A), np.mean(B * B)
    if vxx <= 0 or vyy <= 0:
        raise StatsError("distance correlation undefined for a constant sequence")
    vxy = max(np.mean(A * B), 0.0)
    return float(np.sqrt(vxy / np.sqrt(vxx * vyy)))


@njit(cache=True)
def _permuted_cross(A, B, perm):
    # sum_ij A[i, j] * B[perm[i], perm[j]] over the upper triangle; both symmetric
    n = A.shape[0]
    total = 0.0
    for i in range(n):
        pi = perm[i]
        diag = A[i, i] * B[pi, pi]
        acc = 0.0
        for j in range(i + 1, n):
            acc += A[i, j] * B[pi, perm[j]]
        total += diag + 2.0 * acc
    return total


def dcorr_permutation_p(x, y, n_perm: int = 999, seed: int = 0) -> float:
    """Permutation p-value for distance correlation, permuting ``y``.

    Only the cross term changes under permutation, so the statistic compared
    is ``sum(A * B[perm][:, perm])``.
    """
    if n_perm < 100:
        raise StatsError("n_perm must be >= 100")
    x, y = _as_sample(x, "X"), _as_sample(y, "Y")
    A, B = _centered_distances(x), _centered_distances(y)
    observed = _permuted_cross(A, B, np.arange(x.size))
    rng = np.random.default_rng(seed)
    hits = 0
    tol = 1e-12 * abs(observed)
    for _ in range(n_perm):
        perm = rng.permutation(x.size)
        if _permuted_cross(A, B, perm) >= observed - tol:
            hits += 1
    return (1 + hits) / (1 + n_perm)


def dcorr_test(x, y, n_perm: int = 999, seed: int = 0) -> DcorrResult:
    x, y = np.asarray(x, float), np.asarray(y, float)
    r = distance_correlation(x, y)
    p = dcorr_permutation_p(x, y, n_perm, seed)
    sign = int(np.sign(np.corrcoef(x, y)[0, 1]))
    return DcorrResult(r, p, x.size, sign)


def dcorr_convergence(ds: CampaignDataset, param: str, stride: int = 50,
                      response: str = "fuel_L") -> list[tuple[int, float]]:
    """Distance correlation on growing prefixes of the dataset (every ``stride``
    records, always ending with the full dataset)."""
    if stride < 1:
        raise StatsError("stride must be >= 1")
    x, y = ds.column(param), ds.column(response)
    sizes = list(range(stride, x.size + 1, stride))
    if not sizes or sizes[-1] != x.size:
        sizes.append(x.size)
    return [(n, distance_correlation(x[:n], y[:n])) for n in sizes if n >= 2]


def goodness(pred, obs) -> tuple[float, float]:
    """Return ``(r_square, rmse)`` of predictions against observations."""
    pred, obs = np.asarray(pred, float), np.asarray(obs, float)
    if pred.shape != obs.shape:
        raise StatsError("pred and obs must have the same length")
    resid = obs - pred
    sse = float(resid @ resid)
    sst = float(np.sum((obs - obs.mean()) ** 2))
    if sst == 0:
        raise StatsError("R^2 undefined for constant observations")
    return 1.0 - sse / sst, float(np.sqrt(sse / obs.size))


def _quintic_design(u: np.ndarray, degree: int) -> np.ndarray:
    return np.vander(u, degree + 1, increasing=True)


def fit_quintic(a_vals, fuel, degree: int = 5) -> QuinticModel:
    """Least-squares polynomial of ``fuel`` in ``a_vals`` (quintic by default).

    The fit runs on standardized inputs; returned ``coeffs`` are in the raw
    variable, highest power first, padded to six entries.
    """
    a, y = np.asarray(a_vals, float), np.asarray(fuel, float)
    if a.size != y.size:
        raise StatsError("a_vals and fuel must have equal lengths")
    if a.size < degree + 1:
        raise StatsError(f"need at least {degree + 1} points")
    center, scale = float(a.mean()), float(a.std())
    if scale == 0:
        raise StatsError("a_vals are all equal")
    V = _quintic_design((a - center) / scale, degree)
    c_u, _, rank, _ = np.linalg.lstsq(V, y, rcond=None)
    if rank < degree + 1:
        raise StatsError(f"rank-deficient design (rank {rank} < {degree + 1})")
    raw = Polynomial(c_u)(Polynomial([-center / scale, 1.0 / scale])).coef
    raw = np.pad(raw, (0, 6 - raw.size))
    r2, rmse = goodness(V @ c_u, y)
    return QuinticModel(tuple(float(z) for z in raw[::-1]), r2, rmse, center, scale,
                        tuple(float(c) for c in c_u))


def quintic_residual_gram(model: QuinticModel, a_vals, fuel) -> np.ndarray:
    """Design-column inner products with the residual (zero at the LS optimum)."""
    a, y = np.asarray(a_vals, float), np.asarray(fuel, float)
    V = _quintic_design((a - model.center) / model.scale, len(model.u_coeffs) - 1)
    return V.T @ (y - model(a))


def histogram(samples, n_bins: int = 20, range_: tuple[float, float] | None = None) -> Histogram:
    if n_bins < 2:
        raise StatsError("n_bins must be >= 2")
    x = np.asarray(samples, float)
    lo, hi = (float(x.min()), float(x.max())) if range_ is None else map(float, range_)
    if not hi > lo:
        raise StatsError("histogram range has zero width")
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    return Histogram(edges, counts / counts.sum())


def paired_histograms(p_samples, q_samples, n_bins: int = 20) -> tuple[Histogram, Histogram]:
    """Histograms of two samples over their pooled range."""
    pooled = np.concatenate([np.asarray(p_samples, float), np.asarray(q_samples, float)])
    rng = (float(pooled.min()), float(pooled.max()))
    return histogram(p_samples, n_bins, rng), histogram(q_samples, n_bins, rng)


def kl_divergence(P: Histogram, Q: Histogram) -> float:
    """KL(P || Q) in nats.

    Bins where P has mass but Q is empty get Q floored at 1e-12, after
    which Q is renormalized. Bins empty in P contribute nothing and are left
    alone, so KL(P || P) is exactly zero.
    """
    if P.edges.shape != Q.edges.shape or not np.array_equal(P.edges, Q.edges):
        raise StatsError("histograms must share identical edges")
    p = P.probs
    q = np.where((p > 0) & (Q.probs < KL_EPS), KL_EPS, Q.probs)
    q = q / q.sum()
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def binned_means(x, y, n_bins: int = 10, range_: tuple[float, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bin centres and mean ``y`` per equal-width bin of ``x`` (NaN if empty)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    lo, hi = (x.min(), x.max()) if range_ is None else range_
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    sums = np.bincount(idx, weights=y, minlength=n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    return 0.5 * (edges[1:] + edges[:-1]), means


def peak_to_trough(x, y, n_bins: int = 10, range_: tuple[float, float] | None = None) -> float:
    """Relative spread (max - min) / min of the binned means of ``y`` over ``x``."""
    _, m = binned_means(x, y, n_bins, range_)
    m = m[np.isfinite(m)]
    return float((m.max() - m.min()) / m.min())


def write_correlation_report(rows: Sequence[tuple[str, str, DcorrResult]], path: str | Path) -> None:
    """Write ``traffic,param,r,p`` rows (plus the Pearson sign annotation)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traffic", "param", "r", "p", "pearson_sign"])
        for traffic, param, res in rows:
            w.writerow([traffic, param, repr(res.r), repr(res.p_value), res.pearson_sign])


def write_fit_report(rows: Sequence[tuple[str, str, str, float, float]], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traffic", "vehicle", "model", "r_square", "rmse_L"])
        for traffic, vehicle, model, r2, rmse in rows:
            w.writerow([traffic, vehicle, model, repr(float(r2)), repr(float(rmse))])
