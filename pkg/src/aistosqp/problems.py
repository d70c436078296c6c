"""Equality-constrained stochastic test problems and the Gaussian noise model.

A problem is ``min f(x)  s.t.  c(x) = 0`` with deterministic constraints and an
objective whose derivatives are only observed through noisy single samples.
Every catalog problem ships exact first and second derivatives; the noise is
added on top by :func:`sample_gradient` and :func:`sample_lagrangian_hessian`.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, UnknownProblemError

__all__ = [
    "ProblemSpec",
    "NoiseModel",
    "SIGMA2_GRID",
    "eval_kkt_residual",
    "lagrangian_gradient",
    "lagrangian_hessian",
    "sample_gradient",
    "sample_lagrangian_hessian",
    "builtin_problem",
    "list_problems",
    "check_derivatives",
]

# variance levels used in the original experiments
SIGMA2_GRID = (1e-8, 1e-4, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Smooth equality-constrained problem with analytic derivatives.

    ``cons_hess(x)`` returns an ``(m, d, d)`` stack of constraint Hessians.
    ``known_solution`` is an ``(x_star, lam_star)`` pair or ``None``.

    Catalog evaluators broadcast over leading axes: ``grad`` maps ``(..., d)``
    to ``(..., d)``, ``jac`` to ``(..., m, d)`` and so on. ``vectorized``
    records this; user problems may leave it ``False``.
    """

    name: str
    dim_primal: int
    dim_dual: int
    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    cons: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    cons_hess: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    lam0: np.ndarray
    known_solution: Optional[tuple] = None
    affine_constraints: bool = False
    vectorized: bool = True
    description: str = ""

    def __post_init__(self):
        d, m = self.dim_primal, self.dim_dual
        if not 0 < m < d:
            raise ConfigurationError(f"need 0 < m < d, got d={d}, m={m}")
        object.__setattr__(self, "x0", _frozen(self.x0, (d,), "x0"))
        object.__setattr__(self, "lam0", _frozen(self.lam0, (m,), "lam0"))
        if self.known_solution is not None:
            xs, ls = self.known_solution
            object.__setattr__(
                self,
                "known_solution",
                (_frozen(xs, (d,), "x_star"), _frozen(ls, (m,), "lam_star")),
            )

    @property
    def dim(self):
        return self.dim_primal + self.dim_dual

    def with_solution(self, x_star, lam_star):
        return replace(self, known_solution=(x_star, lam_star))

    def with_start(self, x0=None, lam0=None):
        return replace(
            self,
            x0=self.x0 if x0 is None else x0,
            lam0=self.lam0 if lam0 is None else lam0,
        )


def _frozen(a, shape, label):
    a = np.array(a, dtype=float)
    if a.shape != shape:
        raise ConfigurationError(f"{label} has shape {a.shape}, expected {shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise on the objective gradient and Hessian.

    Gradient samples are ``N(grad f(x), sigma2 * structure)`` where the
    structure defaults to ``I + 11^T``. Each unordered Hessian entry pair
    ``(i, j), (j, i)`` receives one ``N(0, sigma2)`` draw.
    """

    sigma2: float = 0.0
    structure: Optional[np.ndarray] = None
    _factors: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.sigma2 >= 0.0:
            raise ConfigurationError(f"sigma2 must be >= 0, got {self.sigma2}")

    def gradient_covariance(self, d):
        base = np.eye(d) + np.ones((d, d)) if self.structure is None else np.asarray(self.structure, float)
        if base.shape != (d, d):
            raise ConfigurationError(f"noise structure has shape {base.shape}, expected {(d, d)}")
        return self.sigma2 * base

    def gradient_factor(self, d):
        """Lower Cholesky factor of the gradient covariance (cached per ``d``)."""
        L = self._factors.get(d)
        if L is None:
            cov = self.gradient_covariance(d)
            L = np.zeros((d, d)) if self.sigma2 == 0.0 else np.linalg.cholesky(cov)
            self._factors[d] = L
        return L


def _check_point(problem, x, lam=None):
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim_primal,):
        raise ConfigurationError(f"x has shape {x.shape}, expected ({problem.dim_primal},)")
    if lam is None:
        return x
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (problem.dim_dual,):
        raise ConfigurationError(f"lambda has shape {lam.shape}, expected ({problem.dim_dual},)")
    return x, lam


def lagrangian_gradient(problem, x, lam):
    """Stacked ``(grad_x L, c)`` at ``(x, lam)``."""
    x, lam = _check_point(problem, x, lam)
    return np.concatenate([problem.grad(x) + problem.jac(x).T @ lam, problem.cons(x)])


def lagrangian_hessian(problem, x, lam):
    x, lam = _check_point(problem, x, lam)
    return problem.hess(x) + np.tensordot(lam, problem.cons_hess(x), axes=1)


def eval_kkt_residual(problem, x, lam):
    """Euclidean norm of ``(grad f + G^T lam, c)``."""
    return float(np.linalg.norm(lagrangian_gradient(problem, x, lam)))


def sample_gradient(problem, x, noise, rng):
    """One noisy gradient ``grad f(x) + L z`` with ``L L^T`` the noise covariance."""
    g = problem.grad(x)
    if noise.sigma2 == 0.0:
        return np.array(g, dtype=float)
    d = problem.dim_primal
    return g + noise.gradient_factor(d) @ rng.standard_normal(d)


@functools.lru_cache(maxsize=None)
def _sym_index(d):
    # position of entry (i, j) in the row-major upper-triangle draw vector
    iu, ju = np.triu_indices(d)
    M = np.empty((d, d), dtype=np.intp)
    M[iu, ju] = np.arange(iu.size)
    M[ju, iu] = M[iu, ju]
    return M


def hessian_noise_size(d):
    return d * (d + 1) // 2


def symmetric_noise(draws, d, sigma2):
    """Map ``d(d+1)/2`` standard normals (per leading index) to a symmetric noise matrix."""
    return np.sqrt(sigma2) * np.asarray(draws)[..., _sym_index(d)]


def sample_objective_hessian(problem, x, noise, rng):
    H = np.array(problem.hess(x), dtype=float)
    if noise.sigma2 == 0.0:
        return H
    d = problem.dim_primal
    return H + symmetric_noise(rng.standard_normal(hessian_noise_size(d)), d, noise.sigma2)


def sample_lagrangian_hessian(problem, x, lam, noise, rng):
    """Noisy objective Hessian plus the exact constraint curvature ``sum lam_i hess c_i``."""
    x, lam = _check_point(problem, x, lam)
    H = sample_objective_hessian(problem, x, noise, rng)
    if not problem.affine_constraints:
        H += np.tensordot(lam, problem.cons_hess(x), axes=1)
    return H


# ---------------------------------------------------------------------------
# catalog


def _bcast(M, x):
    return np.broadcast_to(M, x.shape[:-1] + M.shape).copy()


def _zeros(x, *shape):
    return np.zeros(x.shape[:-1] + shape)


def _eq_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    C = np.array([[1.0, 1.0]])
    rhs = np.array([1.0])
    K = np.block([[A, C.T], [C, np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.concatenate([b, rhs]))
    return ProblemSpec(
        name="eq_quadratic",
        dim_primal=2,
        dim_dual=1,
        f=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x) - x @ b,
        grad=lambda x: x @ A - b,
        hess=lambda x: _bcast(A, x),
        cons=lambda x: x @ C.T - rhs,
        jac=lambda x: _bcast(C, x),
        cons_hess=lambda x: _zeros(x, 1, 2, 2),
        # feasible start; see the README on early transients
        x0=np.array([1.0, 0.0]),
        lam0=np.zeros(1),
        known_solution=(sol[:2], sol[2:]),
        affine_constraints=True,
        description="strongly convex quadratic with one affine constraint (d=2, m=1)",
    )


def _eq_logistic():
    d, n = 4, 60
    data_rng = np.random.default_rng(20220601)
    A = data_rng.standard_normal((n, d))
    w_true = np.array([1.0, -0.5, 0.25, 0.8])
    y = np.where(A @ w_true + 0.3 * data_rng.standard_normal(n) >= 0.0, 1.0, -1.0)
    ridge = 0.1
    C = np.array([[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 0.0, 0.0]])
    rhs = np.array([1.0, 0.5])
    YA = y[:, None] * A

    def f(x):
        return np.mean(np.logaddexp(0.0, -(x @ YA.T)), axis=-1) + 0.5 * ridge * np.sum(x * x, axis=-1)

    def grad(x):
        s = 1.0 / (1.0 + np.exp(x @ YA.T))  # sigmoid(-y a^T x)
        return -(s @ YA) / n + ridge * x

    def hess(x):
        s = 1.0 / (1.0 + np.exp(x @ YA.T))
        return np.einsum("...k,ki,kj->...ij", s * (1.0 - s), A, A) / n + ridge * np.eye(d)

    return ProblemSpec(
        name="eq_logistic",
        dim_primal=d,
        dim_dual=2,
        f=f,
        grad=grad,
        hess=hess,
        cons=lambda x: x @ C.T - rhs,
        jac=lambda x: _bcast(C, x),
        cons_hess=lambda x: _zeros(x, 2, d, d),
        x0=np.zeros(d),
        lam0=np.zeros(2),
        affine_constraints=True,
        description="ridge logistic regression on a fixed synthetic sample, two affine constraints",
    )


def _hs7():
    def f(x):
        return np.log1p(x[..., 0] ** 2) - x[..., 1]

    def grad(x):
        x1 = x[..., 0]
        return np.stack([2.0 * x1 / (1.0 + x1**2), -np.ones_like(x1)], axis=-1)

    def hess(x):
        x1 = x[..., 0]
        H = _zeros(x, 2, 2)
        H[..., 0, 0] = 2.0 * (1.0 - x1**2) / (1.0 + x1**2) ** 2
        return H

    def cons(x):
        return ((1.0 + x[..., 0] ** 2) ** 2 + x[..., 1] ** 2 - 4.0)[..., None]

    def jac(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([4.0 * x1 * (1.0 + x1**2), 2.0 * x2], axis=-1)[..., None, :]

    def cons_hess(x):
        H = _zeros(x, 1, 2, 2)
        H[..., 0, 0, 0] = 4.0 + 12.0 * x[..., 0] ** 2
        H[..., 0, 1, 1] = 2.0
        return H

    return ProblemSpec(
        name="hs7",
        dim_primal=2,
        dim_dual=1,
        f=f,
        grad=grad,
        hess=hess,
        cons=cons,
        jac=jac,
        cons_hess=cons_hess,
        x0=np.array([2.0, 2.0]),
        lam0=np.zeros(1),
        description="Hock-Schittkowski #7: min ln(1+x1^2)-x2 s.t. (1+x1^2)^2+x2^2=4",
    )


def _hs48():
    C = np.array([[1.0, 1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 1.0, -2.0, -2.0]])
    rhs = np.array([5.0, -3.0])
    H = 2.0 * np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, -1.0, 0.0, 0.0],
            [0.0, -1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, -1.0],
            [0.0, 0.0, 0.0, -1.0, 1.0],
        ]
    )
    shift = np.array([1.0, 0.0, 0.0, 0.0, 0.0])

    def f(x):
        return (x[..., 0] - 1.0) ** 2 + (x[..., 1] - x[..., 2]) ** 2 + (x[..., 3] - x[..., 4]) ** 2

    # f is quadratic with Hessian H, so grad f = H x - 2*shift
    K = np.block([[H, C.T], [C, np.zeros((2, 2))]])
    sol = np.linalg.solve(K, np.concatenate([2.0 * shift, rhs]))
    return ProblemSpec(
        name="hs48",
        dim_primal=5,
        dim_dual=2,
        f=f,
        grad=lambda x: x @ H - 2.0 * shift,
        hess=lambda x: _bcast(H, x),
        cons=lambda x: x @ C.T - rhs,
        jac=lambda x: _bcast(C, x),
        cons_hess=lambda x: _zeros(x, 2, 5, 5),
        x0=np.array([3.0, 5.0, -3.0, 2.0, -2.0]),
        lam0=np.zeros(2),
        known_solution=(sol[:5], sol[5:]),
        affine_constraints=True,
        description="Hock-Schittkowski #48: separable quadratic, two affine constraints (d=5, m=2)",
    )


def _byrdsphr():
    def cons(x):
        r = x[..., 1] ** 2 + x[..., 2] ** 2 - 9.0
        return np.stack([x[..., 0] ** 2 + r, (x[..., 0] - 1.0) ** 2 + r], axis=-1)

    def jac(x):
        shifted = x.copy()
        shifted[..., 0] -= 1.0
        return 2.0 * np.stack([x, shifted], axis=-2)

    two_i = 2.0 * np.eye(3)
    return ProblemSpec(
        name="byrdsphr",
        dim_primal=3,
        dim_dual=2,
        f=lambda x: -np.sum(x, axis=-1),
        grad=lambda x: -np.ones_like(x),
        hess=lambda x: _zeros(x, 3, 3),
        cons=cons,
        jac=jac,
        cons_hess=lambda x: _bcast(np.stack([two_i, two_i]), x),
        x0=np.array([5.0, 1e-4, -1e-4]),
        lam0=np.zeros(2),
        description="Byrd's two-sphere intersection: min -sum(x) on two radius-3 spheres",
    )


_CATALOG = {
    "eq_quadratic": _eq_quadratic,
    "eq_logistic": _eq_logistic,
    "hs7": _hs7,
    "hs48": _hs48,
    "byrdsphr": _byrdsphr,
}
_ALIASES = {"byrdsphr-like": "byrdsphr"}


def list_problems():
    return tuple(_CATALOG)


@functools.lru_cache(maxsize=None)
def builtin_problem(name):
    """Return a catalog problem with ``known_solution`` filled in.

    Problems without a closed-form solution get the stationary point found by
    the deterministic SQP oracle from their default start.
    """
    key = _ALIASES.get(name, name)
    if key not in _CATALOG:
        raise UnknownProblemError(name, list_problems())
    problem = _CATALOG[key]()
    if problem.known_solution is None:
        from .solver import deterministic_sqp_oracle

        x_star, lam_star = deterministic_sqp_oracle(problem, problem.x0, problem.lam0)
        problem = problem.with_solution(x_star, lam_star)
    return problem


# ---------------------------------------------------------------------------
# derivative checks


def _rel_err(analytic, approx):
    return float(np.linalg.norm(analytic - approx) / max(np.linalg.norm(analytic), 1.0))


def _central_diff(fun, x, h):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def check_derivatives(problem, points=20, rng=None, h=1e-5, radius=1.0):
    """Largest relative error of every analytic derivative against central differences.

    Points are drawn uniformly in a box of half-width ``radius`` around ``x0``
    and the known solution (when present). Errors are measured as
    ``||analytic - fd|| / max(||analytic||, 1)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    centers = [problem.x0]
    if problem.known_solution is not None:
        centers.append(problem.known_solution[0])
    worst = {"grad": 0.0, "jac": 0.0, "hess": 0.0, "cons_hess": 0.0}
    d, m = problem.dim_primal, problem.dim_dual
    for k in range(points):
        x = centers[k % len(centers)] + rng.uniform(-radius, radius, size=d)
        g, G = problem.grad(x), problem.jac(x)
        H, CH = problem.hess(x), problem.cons_hess(x)
        if g.shape != (d,) or G.shape != (m, d) or H.shape != (d, d) or CH.shape != (m, d, d):
            raise ConfigurationError(f"{problem.name}: evaluator output shapes disagree with (d={d}, m={m})")
        if problem.cons(x).shape != (m,):
            raise ConfigurationError(f"{problem.name}: c(x) has wrong shape")
        worst["grad"] = max(worst["grad"], _rel_err(g, _central_diff(problem.f, x, h)))
        worst["jac"] = max(worst["jac"], _rel_err(G, _central_diff(problem.cons, x, h)))
        worst["hess"] = max(worst["hess"], _rel_err(H, _central_diff(problem.grad, x, h)))
        # d/dx_k of jac gives (m, d, d) with the differentiation axis last
        worst["cons_hess"] = max(worst["cons_hess"], _rel_err(CH, _central_diff(problem.jac, x, h)))
    return worst
