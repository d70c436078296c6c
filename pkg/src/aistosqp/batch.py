"""Lockstep execution of many independent runs.

Monte-Carlo experiments repeat the same iteration for hundreds of seeds. This
module advances all of them together with stacked linear algebra while every
run keeps its own three random streams, so run ``k`` of a batch follows the
trajectory that :func:`aistosqp.solver.run` produces for ``run_index=k`` (up to
floating-point rounding of the stacked solves).

Supported sketches are ``exact`` and ``kaczmarz``; the problem's evaluators
must broadcast over a leading axis (``problem.vectorized``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConstraintQualificationError
from .inference import CovarianceAccumulator
from .kkt import RANK_TOL
from .problems import hessian_noise_size, symmetric_noise
from .sketch import coordinate_indices
from .solver import DIVERGENCE_RADIUS, make_streams
from .stepsize import envelope

__all__ = ["BatchState", "run_batch"]

_CHUNK = 512


@dataclass
class BatchState:
    run_indices: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    hess_sum: np.ndarray
    g_sum: np.ndarray
    g_outer: np.ndarray
    t: int = 0
    K: np.ndarray = None
    alpha: np.ndarray = None
    beta: float = float("nan")
    delta: np.ndarray = None
    active: np.ndarray = None
    failures: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.run_indices.size

    def accumulator(self, r):
        """Gradient moments of run ``r`` (position within the batch)."""
        acc = CovarianceAccumulator(self.g_sum.shape[1])
        acc.sum = self.g_sum[r].copy()
        acc.sum_outer = self.g_outer[r].copy()
        acc.count = self.t
        return acc

    def kkt_residuals(self, problem):
        G = problem.jac(self.x)
        gl = problem.grad(self.x) + np.einsum("rmd,rm->rd", G, self.lam)
        c = problem.cons(self.x)
        return np.sqrt(np.sum(gl * gl, axis=1) + np.sum(c * c, axis=1))

    def errors(self, problem):
        x_star, lam_star = problem.known_solution
        return np.sqrt(np.sum((self.x - x_star) ** 2, axis=1) + np.sum((self.lam - lam_star) ** 2, axis=1))


class _Streams:
    """Per-run generators with block pre-fetching of their draws."""

    def __init__(self, seed, indices, d, sigma2, tau, coordinate, uniform_step):
        self.streams = [make_streams(seed, int(k)) for k in indices]
        self.noisy = sigma2 > 0.0
        self.width = d + hessian_noise_size(d)
        self.tau = tau
        self.coordinate = coordinate
        self.uniform_step = uniform_step
        self.pos = _CHUNK

    def _refill(self):
        if self.noisy:
            self.normals = np.stack([xi.standard_normal((_CHUNK, self.width)) for xi, _, _ in self.streams])
        if self.coordinate:
            self.sketch_u = np.stack([zeta.random((_CHUNK, self.tau)) for _, zeta, _ in self.streams])
        if self.uniform_step:
            self.step_u = np.stack([psi.random(_CHUNK) for _, _, psi in self.streams])
        self.pos = 0

    def next(self):
        if self.pos == _CHUNK:
            self._refill()
        p = self.pos
        self.pos += 1
        normals = self.normals[:, p] if self.noisy else None
        sketch = self.sketch_u[:, p] if self.coordinate else None
        step = self.step_u[:, p] if self.uniform_step else None
        return normals, sketch, step


def _nullspace(G):
    m = G.shape[-2]
    s = np.linalg.svd(G, compute_uv=False)
    if np.any(s[..., -1] < RANK_TOL * s[..., 0]):
        raise ConstraintQualificationError("constraint Jacobian is rank deficient")
    Q, _ = np.linalg.qr(np.swapaxes(G, -1, -2), mode="complete")
    return Q[..., m:]


def run_batch(problem, config, run_indices, observer=None):
    """Advance the runs ``run_indices`` of ``config`` for ``config.iters`` iterations.

    ``observer(state)`` is called after every iteration. Runs that diverge or
    hit a singular KKT matrix are frozen at their last iterate and listed in
    ``state.failures``; the remaining runs continue.
    """
    if not problem.vectorized:
        raise ConfigurationError(f"problem {problem.name!r} does not broadcast over a batch axis")
    dist = config.distribution(problem)
    if dist.kind not in ("exact", "coordinate"):
        raise ConfigurationError("batched runs support the exact and kaczmarz sketches only")
    idx = np.asarray(run_indices, dtype=int)
    R, d, m = idx.size, problem.dim_primal, problem.dim_dual
    n = d + m
    noise, sched, policy = config.noise, config.schedule, config.policy
    streams = _Streams(config.seed, idx, d, noise.sigma2, config.tau,
                       dist.kind == "coordinate", policy.kind == "uniform_random")
    L = noise.gradient_factor(d)
    eye_d = np.eye(d)
    state = BatchState(
        run_indices=idx,
        x=np.tile(problem.x0, (R, 1)),
        lam=np.tile(problem.lam0, (R, 1)),
        hess_sum=np.zeros((R, d, d)),
        g_sum=np.zeros((R, d)),
        g_outer=np.zeros((R, d, d)),
        active=np.ones(R, dtype=bool),
    )
    Z_fixed = None
    rows = np.arange(R)

    for _ in range(config.iters):
        t = state.t
        x, lam = state.x, state.lam
        normals, sketch_u, step_u = streams.next()

        g_bar = problem.grad(x)
        H_bar = problem.hess(x)
        if normals is not None:
            g_bar = g_bar + normals[:, :d] @ L.T
            H_bar = H_bar + symmetric_noise(normals[:, d:], d, noise.sigma2)
        if not problem.affine_constraints:
            H_bar = H_bar + np.einsum("rm,rmij->rij", lam, problem.cons_hess(x))

        G = problem.jac(x)
        if t == 0:
            B = np.broadcast_to(eye_d, (R, d, d)).copy()
            delta = np.zeros(R)
        else:
            if problem.affine_constraints:
                if Z_fixed is None:
                    Z_fixed = _nullspace(G[0])
                Z = Z_fixed
            else:
                Z = _nullspace(G)
            avg = state.hess_sum / t
            red = np.swapaxes(Z, -1, -2) @ avg @ Z
            lam_hat = np.linalg.eigvalsh(red)[:, 0]
            delta = np.where(lam_hat < config.pd_floor, config.pd_floor - lam_hat, 0.0)
            B = avg + delta[:, None, None] * eye_d

        K = np.zeros((R, n, n))
        K[:, :d, :d] = B
        K[:, :d, d:] = np.swapaxes(G, 1, 2)
        K[:, d:, :d] = G
        rhs = -np.concatenate([g_bar + np.einsum("rmd,rm->rd", G, lam), problem.cons(x)], axis=1)

        ok = state.active.copy()
        if dist.kind == "exact":
            z = np.zeros((R, n))
            try:
                z[ok] = np.linalg.solve(K[ok], rhs[ok][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for r in np.flatnonzero(ok):
                    try:
                        z[r] = np.linalg.solve(K[r], rhs[r])
                    except np.linalg.LinAlgError:
                        ok[r] = False
                        state.failures[int(idx[r])] = f"singular KKT matrix at iteration {t}"
        else:
            norms2 = np.einsum("rij,rij->rj", K, K)
            coords = coordinate_indices(sketch_u, n)
            z = np.zeros((R, n))
            for j in range(config.tau):
                i = coords[:, j]
                row = K[rows, i]
                resid = np.einsum("rn,rn->r", row, z) - rhs[rows, i]
                z -= (resid / norms2[rows, i])[:, None] * row

        beta, _, eta, _ = envelope(sched, t)
        if policy.kind == "uniform_random":
            alpha = np.clip(beta + (eta - beta) * step_u, beta, eta)
        elif policy.kind == "deterministic_lower":
            alpha = np.full(R, beta)
        else:
            alpha = np.full(R, 0.5 * (beta + eta))

        x_new = x + alpha[:, None] * z[:, :d]
        lam_new = lam + alpha[:, None] * z[:, d:]
        size = np.maximum(np.abs(x_new).max(axis=1), np.abs(lam_new).max(axis=1))
        blown = ok & ~(size <= DIVERGENCE_RADIUS)
        for r in np.flatnonzero(blown):
            state.failures[int(idx[r])] = f"iterate diverged at iteration {t}"
        ok &= ~blown

        state.x = np.where(ok[:, None], x_new, x)
        state.lam = np.where(ok[:, None], lam_new, lam)
        w = ok[:, None, None]
        state.hess_sum += np.where(w, H_bar, 0.0)
        state.g_sum += np.where(ok[:, None], g_bar, 0.0)
        state.g_outer += np.where(w, g_bar[:, :, None] * g_bar[:, None, :], 0.0)
        state.active = ok
        state.K, state.alpha, state.beta, state.delta = K, alpha, beta, delta
        state.t = t + 1
        if observer is not None:
            observer(state)
    return state
