"""Randomized sketch-and-project solver for KKT systems.

One step moves ``z`` to the closest point satisfying the sketched equations
``S^T K z = S^T rhs``::

    z' = z - K S (S^T K^2 S)^+ S^T (K z - rhs)

With coordinate sketches ``S = e_i`` this is randomized Kaczmarz on the rows
of the symmetric matrix ``K``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigurationError, SingularKKTError

__all__ = [
    "PINV_RCOND",
    "SketchDistribution",
    "SolveReport",
    "AuditResult",
    "parse_sketch",
    "projection_matrix",
    "sketch_project_step",
    "solve_inexact",
    "solve_exact",
    "contraction_audit",
]

PINV_RCOND = 1e-12
_KINDS = ("coordinate", "block_coordinate", "gaussian", "exact")


@dataclass(frozen=True)
class SketchDistribution:
    """Distribution of sketching matrices ``S`` of shape ``(n, q)``.

    ``coordinate`` draws ``e_i`` uniformly; ``block_coordinate`` draws ``q``
    distinct coordinates; ``gaussian`` has i.i.d. ``N(0, 1)`` entries;
    ``exact`` bypasses sketching and solves directly.
    """

    kind: str
    n: int
    q: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown sketch kind {self.kind!r}; choose from {_KINDS}")
        if self.n < 1:
            raise ConfigurationError("sketch dimension must be positive")
        if self.kind == "coordinate" and self.q != 1:
            raise ConfigurationError("coordinate sketches have q = 1")
        if self.kind in ("block_coordinate", "gaussian") and not 1 <= self.q <= self.n:
            raise ConfigurationError(f"block size q={self.q} outside [1, {self.n}]")

    def sample(self, rng):
        if self.kind == "coordinate":
            S = np.zeros((self.n, 1))
            S[coordinate_indices(rng.random(), self.n), 0] = 1.0
            return S
        if self.kind == "block_coordinate":
            idx = np.sort(rng.choice(self.n, size=self.q, replace=False))
            return np.eye(self.n)[:, idx]
        if self.kind == "gaussian":
            return rng.standard_normal((self.n, self.q))
        raise ConfigurationError("exact distribution has no sketches")


def coordinate_indices(u, n):
    """Uniform coordinates from uniform doubles ``u`` in ``[0, 1)``.

    Doubles consume the generator one word at a time, so pre-drawing them in
    blocks yields the same indices as drawing per iteration.
    """
    return np.minimum((np.asarray(u) * n).astype(np.intp), n - 1)


def parse_sketch(spec, n):
    """Parse ``kaczmarz | exact | block:q | gaussian:q`` into a distribution."""
    name, _, arg = spec.partition(":")
    if name in ("kaczmarz", "coordinate"):
        return SketchDistribution("coordinate", n)
    if name == "exact":
        return SketchDistribution("exact", n)
    if name in ("block", "gaussian"):
        if not arg:
            raise ConfigurationError(f"sketch {spec!r} needs a block size, e.g. {name}:2")
        q = int(arg)
        return SketchDistribution("block_coordinate" if name == "block" else "gaussian", n, min(q, n))
    raise ConfigurationError(f"unknown sketch {spec!r}; use kaczmarz, exact, block:q or gaussian:q")


@dataclass
class SolveReport:
    z: np.ndarray
    iterations: int
    residual_annihilated: bool
    exact_solution: Optional[np.ndarray] = None


@dataclass
class AuditResult:
    gamma_S: float
    rho: float
    mean_projection: np.ndarray

    def rho_tau(self, tau):
        return self.rho**tau


def _pinv_t(KS):
    # M (M^T M)^+ equals pinv(M^T); cutting singular values of M at sqrt(PINV_RCOND)
    # drops the same components as cutting M^T M at PINV_RCOND, without squaring
    # the condition number
    return np.linalg.pinv(KS.T, rcond=np.sqrt(PINV_RCOND))


def projection_matrix(K, S):
    """``K S (S^T K^2 S)^+ S^T K``, an orthogonal projector."""
    KS = K @ S
    return _pinv_t(KS) @ KS.T


def sketch_project_step(K, rhs, z, S):
    return z - _pinv_t(K @ S) @ (S.T @ (K @ z - rhs))


def _kaczmarz(K, rhs, idx):
    # K symmetric: column i equals row i
    norms2 = np.einsum("ij,ij->j", K, K)
    z = np.zeros(K.shape[0])
    for i in idx:
        if norms2[i] == 0.0:
            continue  # zero row: the pseudoinverse of a zero Gram matrix is zero
        row = K[i]
        z -= ((row @ z - rhs[i]) / norms2[i]) * row
    last = idx[-1]
    resid = abs(K[last] @ z - rhs[last])
    return z, resid <= 1e-10 * max(1.0, abs(rhs[last]), np.sqrt(norms2[last]) * np.abs(z).max())


def solve_inexact(K, rhs, tau, dist, rng, audit=False):
    """Run ``tau`` sketch-and-project iterations from ``z = 0``.

    Deterministic given the generator state. For ``dist.kind == "exact"`` the
    system is solved directly and ``tau`` is ignored.
    """
    if tau < 1:
        raise ConfigurationError("tau must be at least 1")
    if dist.kind == "exact":
        z = solve_exact(K, rhs)
        return SolveReport(z=z, iterations=0, residual_annihilated=True,
                           exact_solution=z.copy() if audit else None)
    if dist.kind == "coordinate":
        z, ok = _kaczmarz(K, rhs, coordinate_indices(rng.random(tau), dist.n))
    else:
        z = np.zeros(K.shape[0])
        for _ in range(tau):
            S = dist.sample(rng)
            z = sketch_project_step(K, rhs, z, S)
        r = S.T @ (K @ z - rhs)
        ok = bool(np.linalg.norm(r) <= 1e-10 * max(1.0, np.linalg.norm(S.T @ rhs)))
    return SolveReport(z=z, iterations=tau, residual_annihilated=bool(ok),
                       exact_solution=solve_exact(K, rhs) if audit else None)


_sysv = lapack.get_lapack_funcs("sysv", dtype=np.float64)


def solve_exact(K, rhs, iteration=None):
    """Direct solve of ``K z = rhs`` by symmetric-indefinite (Bunch-Kaufman) factorization."""
    _, _, z, info = _sysv(K, rhs, lower=1)
    if info > 0:
        raise SingularKKTError("KKT matrix is singular", iteration)
    if info < 0:
        raise ConfigurationError(f"sysv rejected argument {-info}")
    r = K @ z - rhs
    res = np.sqrt(r @ r)
    # infinity-norm scale; NaN fails the comparison
    scale = np.abs(K).max() * np.abs(z).sum() + np.abs(rhs).max()
    if not res <= 1e-10 * max(scale, 1e-300):
        raise SingularKKTError(f"KKT solve inaccurate (residual {res:.3e})", iteration)
    return z


def contraction_audit(K, dist, mc_samples=10_000, rng=None):
    """Expected sketch projection ``E[K S (S^T K^2 S)^+ S^T K]`` and its contraction factor.

    Coordinate sketches use the closed form
    ``(1/n) sum_i K e_i e_i^T K / (K^2)_ii``; block and Gaussian sketches are
    Monte-Carlo averages over ``mc_samples`` draws. ``gamma_S`` is the smallest
    eigenvalue and ``rho = 1 - gamma_S``.
    """
    n = K.shape[0]
    if dist.kind == "exact":
        P = np.eye(n)
    elif dist.kind == "coordinate":
        norms2 = np.einsum("ij,ij->j", K, K)
        inv = np.divide(1.0, norms2, out=np.zeros(n), where=norms2 > 0)
        P = (K * inv) @ K.T / n
    else:
        rng = np.random.default_rng() if rng is None else rng
        P = np.zeros((n, n))
        for _ in range(mc_samples):
            P += projection_matrix(K, dist.sample(rng))
        P /= mc_samples
    P = 0.5 * (P + P.T)
    gamma = float(np.linalg.eigvalsh(P)[0])
    if gamma <= 0.0:
        warnings.warn(
            f"expected sketch projection is not positive definite (gamma_S={gamma:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    gamma = min(gamma, 1.0)
    return AuditResult(gamma_S=gamma, rho=1.0 - gamma, mean_projection=P)
