"""Online covariance estimation, confidence intervals and normality checks.

The limiting covariance of ``(x_t - x*, lam_t - lam*) / sqrt(beta_t)`` is
estimated by sandwiching the sample covariance of the gradient draws between
inverse KKT matrices. The exact limit is available for problems with a known
solution and known noise covariance, both for direct solves and for
sketch-and-project solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, ndtri

from .errors import (
    ConfigurationError,
    DegenerateDirectionError,
    InvalidScheduleError,
    OracleUnavailableError,
    SingularKKTError,
)
from .kkt import kkt_at_point
from .sketch import contraction_audit, projection_matrix

__all__ = [
    "CovarianceAccumulator",
    "ConfidenceQuery",
    "update_moments",
    "covariance_estimate",
    "exact_covariance_oracle",
    "confidence_interval",
    "normality_diagnostics",
    "normal_cdf",
    "NormalityReport",
]


class CovarianceAccumulator:
    """Running first and second moments of gradient samples."""

    def __init__(self, d):
        self.sum = np.zeros(d)
        self.sum_outer = np.zeros((d, d))
        self.count = 0

    def push(self, g):
        self.sum += g
        self.sum_outer += np.outer(g, g)
        self.count += 1

    def merge(self, other):
        out = CovarianceAccumulator(self.sum.size)
        out.sum = self.sum + other.sum
        out.sum_outer = self.sum_outer + other.sum_outer
        out.count = self.count + other.count
        return out

    def mean(self):
        return self.sum / self.count

    def covariance(self):
        """Biased (``1/t``) sample covariance."""
        if self.count == 0:
            raise ConfigurationError("no samples accumulated")
        mu = self.mean()
        cov = self.sum_outer / self.count - np.outer(mu, mu)
        return 0.5 * (cov + cov.T)


def update_moments(acc, g_bar):
    g_bar = np.asarray(g_bar, dtype=float)
    if g_bar.shape != acc.sum.shape:
        raise ConfigurationError(f"gradient has shape {g_bar.shape}, expected {acc.sum.shape}")
    acc.push(g_bar)
    return acc


@dataclass(frozen=True)
class ConfidenceQuery:
    w: np.ndarray
    level: float = 0.95

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if not np.any(w):
            raise ConfigurationError("direction w must be nonzero")
        if not 0 < self.level < 1:
            raise ConfigurationError(f"level must lie in (0, 1), got {self.level}")
        object.__setattr__(self, "w", w)

    @property
    def quantile(self):
        return float(ndtri(0.5 + 0.5 * self.level))


def _divisor(sched):
    div = 2.0 + sched.ratio
    if div <= 0:
        raise InvalidScheduleError(f"2 + beta/beta_tilde = {div} <= 0; schedule outside the normality regime")
    return div


def _sandwich(K, cov_g, m):
    d = cov_g.shape[0]
    mid = np.zeros((d + m, d + m))
    mid[:d, :d] = cov_g
    try:
        Kinv = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise SingularKKTError("KKT matrix is singular") from exc
    out = Kinv @ mid @ Kinv.T
    return 0.5 * (out + out.T)


def covariance_estimate(acc, K, sched):
    """Plug-in estimate ``Xi_t = K^-1 blockdiag(cov(g), 0) K^-1 / (2 + beta/beta_tilde)``."""
    if acc.count < 2:
        raise ConfigurationError("covariance estimate needs at least two samples")
    d = acc.sum.size
    m = K.shape[0] - d
    return _sandwich(K, acc.covariance(), m) / _divisor(sched)


def _kkt_at_solution(problem, pd_floor):
    if problem.known_solution is None:
        raise OracleUnavailableError(f"problem {problem.name!r} has no known solution")
    return kkt_at_point(problem, *problem.known_solution, pd_floor=pd_floor).K


def exact_covariance_oracle(problem, noise, sched, dist, tau, mc_samples=20_000, rng=None, pd_floor=0.1):
    """Limiting covariance of the normalized primal-dual error.

    For direct solves this is ``Omega* / (2 + beta/beta_tilde)``. For sketched
    solves, with ``I + C* = U diag(sigma) U^T`` and ``C~*`` the random product
    of ``tau`` sketch contractions,
    ``Xi* = U (Theta o U^T E[(I + C~*) Omega* (I + C~*)^T] U) U^T`` where
    ``Theta_kl = 1 / (sigma_k + sigma_l + beta/beta_tilde)``. The expectation is
    a Monte-Carlo average over ``mc_samples`` draws.
    """
    K = _kkt_at_solution(problem, pd_floor)
    d, m = problem.dim_primal, problem.dim_dual
    omega = _sandwich(K, noise.gradient_covariance(d), m)
    r = sched.ratio
    if dist.kind == "exact":
        return omega / _divisor(sched)
    n = d + m
    audit = contraction_audit(K, dist, mc_samples=mc_samples, rng=rng)
    C = -np.linalg.matrix_power(np.eye(n) - audit.mean_projection, tau)
    sig, U = np.linalg.eigh(np.eye(n) + 0.5 * (C + C.T))
    theta = 1.0 / (sig[:, None] + sig[None, :] + r)
    rng = np.random.default_rng() if rng is None else rng
    M = np.zeros((n, n))
    for _ in range(mc_samples):
        prod = np.eye(n)
        for _ in range(tau):
            prod = (np.eye(n) - projection_matrix(K, dist.sample(rng))) @ prod
        A = np.eye(n) - prod  # I + C~* with C~* = -prod
        M += A @ omega @ A.T
    M /= mc_samples
    xi = U @ (theta * (U.T @ M @ U)) @ U.T
    return 0.5 * (xi + xi.T)


DEGENERATE_RTOL = 1e-12


def confidence_interval(x, lam, xi, query, t, sched):
    """``w^T (x, lam) +/- z * sqrt(c1 w^T Xi w) / t**(c2/2)``."""
    w = query.w
    z = np.concatenate([np.asarray(x, float), np.asarray(lam, float)])
    if w.shape != z.shape:
        raise ConfigurationError(f"direction has length {w.size}, expected {z.size}")
    var = float(w @ xi @ w)
    # rounding leaves ~1e-16 relative residue where the exact value is zero
    if not var > DEGENERATE_RTOL * np.abs(xi).max() * float(w @ w):
        raise DegenerateDirectionError(f"w^T Xi w = {var:.3e} is not positive")
    center = float(w @ z)
    half = query.quantile * math.sqrt(sched.c1 * var) / max(t, 1) ** (sched.c2 / 2)
    return center - half, center + half


def normal_cdf(x):
    return 0.5 * erfc(-x / math.sqrt(2.0))


@dataclass(frozen=True)
class NormalityReport:
    ks_stat: float
    mean: float
    variance: float
    n: int
    degenerate: bool = False


def normality_diagnostics(samples, standardize=True):
    """Kolmogorov-Smirnov distance of ``samples`` to the standard normal.

    With ``standardize`` the samples are first centred and scaled by their own
    mean and standard deviation (a fitted normal). Constant samples are
    reported as degenerate with the maximal statistic 1.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 50:
        raise ConfigurationError(f"need at least 50 samples, got {s.size}")
    mean = float(s.mean())
    var = float(s.var())
    degenerate = var == 0.0
    if standardize:
        if degenerate:
            return NormalityReport(1.0, mean, var, s.size, degenerate=True)
        s = (s - mean) / math.sqrt(var)
    s = np.sort(s)
    n = s.size
    F = normal_cdf(s)
    i = np.arange(1, n + 1)
    ks = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return NormalityReport(ks, mean, var, n, degenerate=degenerate)
