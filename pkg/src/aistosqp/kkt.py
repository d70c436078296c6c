"""Hessian averaging, reduced-Hessian regularization and KKT assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConstraintQualificationError

__all__ = [
    "RANK_TOL",
    "PD_FLOOR",
    "HessianAverager",
    "KktSystem",
    "constraint_singular_values",
    "nullspace_basis",
    "regularize",
    "assemble_kkt",
    "kkt_at_point",
]

RANK_TOL = 1e-10
PD_FLOOR = 0.1


class HessianAverager:
    """Running sum of sampled Lagrangian Hessians.

    ``average()`` after ``t`` pushes uses exactly samples ``0..t-1``; the
    solver pushes the iteration-``t`` sample only after ``B_t`` is formed.
    """

    def __init__(self, d):
        self.running_sum = np.zeros((d, d))
        self.count = 0

    def push(self, H):
        self.running_sum += H
        self.count += 1

    def average(self):
        if self.count == 0:
            return np.eye(self.running_sum.shape[0])
        return self.running_sum / self.count

    def copy(self):
        other = HessianAverager(self.running_sum.shape[0])
        other.running_sum = self.running_sum.copy()
        other.count = self.count
        return other


@dataclass
class KktSystem:
    B: np.ndarray
    G: np.ndarray
    K: np.ndarray
    delta_magnitude: float
    g_sigma_min: float
    g_sigma_max: float

    @property
    def d(self):
        return self.B.shape[0]

    @property
    def m(self):
        return self.G.shape[0]


def constraint_singular_values(G):
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] < RANK_TOL * s[0] or s[0] == 0.0:
        raise ConstraintQualificationError(
            f"constraint Jacobian is rank deficient (sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e})"
        )
    return float(s[-1]), float(s[0])


def nullspace_basis(G):
    """Orthonormal basis ``Z`` of ``{x : G x = 0}`` from a complete QR of ``G^T``."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m, d = G.shape
    if m >= d:
        raise ConfigurationError(f"need fewer constraints than variables, got G of shape {G.shape}")
    constraint_singular_values(G)
    Q, _ = np.linalg.qr(G.T, mode="complete")
    return Q[:, m:]


def regularize(avg, G, t, pd_floor=PD_FLOOR, Z=None):
    """Shift ``avg`` by a multiple of the identity so that ``Z^T B Z`` is positive definite.

    Returns ``(B, delta_magnitude)``. With ``lam_hat = lambda_min(Z^T avg Z)``
    the shift ``-lam_hat + pd_floor`` is applied whenever ``lam_hat < pd_floor``.
    At ``t == 0`` the identity is returned unchanged.
    """
    d = avg.shape[0]
    if t == 0:
        return np.eye(d), 0.0
    if Z is None:
        Z = nullspace_basis(G)
    red = Z.T @ avg @ Z
    if red.shape[0] == 1:
        lam_hat = float(red[0, 0])
    else:
        lam_hat = float(np.linalg.eigvalsh(0.5 * (red + red.T))[0])
    if lam_hat < pd_floor:
        shift = pd_floor - lam_hat
        return avg + shift * np.eye(d), shift
    return avg, 0.0


def assemble_kkt(B, G, delta_magnitude=0.0, g_svals=None):
    """Build ``K = [[B, G^T], [G, 0]]``.

    ``g_svals`` may carry precomputed ``(sigma_min, sigma_max)`` of ``G`` when the
    Jacobian is known not to change between calls.
    """
    d = B.shape[0]
    m = G.shape[0]
    if B.shape != (d, d) or G.shape[1] != d:
        raise ConfigurationError(f"incompatible shapes B {B.shape}, G {G.shape}")
    if g_svals is None:
        g_svals = constraint_singular_values(G)
    K = np.zeros((d + m, d + m))
    K[:d, :d] = B
    K[:d, d:] = G.T
    K[d:, :d] = G
    return KktSystem(B=B, G=G, K=K, delta_magnitude=float(delta_magnitude),
                     g_sigma_min=g_svals[0], g_sigma_max=g_svals[1])


def kkt_at_point(problem, x, lam, pd_floor=PD_FLOOR):
    """Regularized KKT system from exact derivatives at ``(x, lam)``.

    This is the limit the averaged, regularized ``K_t`` tends to when the
    iterates converge to ``(x, lam)``.
    """
    H = problem.hess(x) + np.tensordot(lam, problem.cons_hess(x), axes=1)
    G = problem.jac(x)
    B, delta = regularize(H, G, 1, pd_floor)
    return assemble_kkt(B, G, delta)
