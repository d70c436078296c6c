"""Polynomial stepsize envelopes and random stepsizes inside them.

The lower envelope is ``beta_t = c1 / t**c2`` and the gap is
``chi_t = beta_t**c3``; any stepsize in ``[beta_t, beta_t + chi_t]`` is admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError

__all__ = ["Schedule", "StepPolicy", "POLICIES", "envelope", "draw_stepsize", "validate_schedule", "RegimeReport"]

POLICIES = ("uniform_random", "deterministic_lower", "deterministic_midpoint")


@dataclass(frozen=True)
class Schedule:
    """``c3 = math.inf`` turns the adaptive gap off (``chi_t = 0``)."""

    c1: float = 2.0
    c2: float = 0.6
    c3: float = 2.0

    def __post_init__(self):
        if not self.c1 > 0:
            raise ConfigurationError(f"c1 must be positive, got {self.c1}")
        if not 0 < self.c2 <= 1:
            raise ConfigurationError(f"c2 must lie in (0, 1], got {self.c2}")
        if not self.c3 > 0:
            raise ConfigurationError(f"c3 must be positive, got {self.c3}")

    @property
    def beta_lim(self):
        return -self.c2

    @property
    def beta_tilde(self):
        return self.c1 if self.c2 == 1 else math.inf

    @property
    def chi_lim(self):
        return -self.c2 * self.c3

    @property
    def ratio(self):
        """``beta_lim / beta_tilde``; zero unless ``c2 == 1``."""
        return self.beta_lim / self.beta_tilde

    def beta(self, t):
        return self.c1 / max(t, 1) ** self.c2

    def chi(self, t):
        if math.isinf(self.c3):
            return 0.0
        return self.beta(t) ** self.c3


@dataclass(frozen=True)
class StepPolicy:
    kind: str = "uniform_random"

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigurationError(f"unknown step policy {self.kind!r}; choose from {POLICIES}")


def envelope(sched, t):
    """``(beta_t, chi_t, eta_t, phi_t)`` with ``phi_t = (beta_t + eta_t) / 2``; ``t = 0`` uses ``t = 1``."""
    if t < 0:
        raise ConfigurationError("iteration index must be non-negative")
    beta = sched.beta(t)
    chi = sched.chi(t)
    eta = beta + chi
    return beta, chi, eta, beta + 0.5 * chi


def draw_stepsize(policy, beta, eta, rng):
    if not 0 < beta <= eta:
        raise ConfigurationError(f"need 0 < beta <= eta, got beta={beta}, eta={eta}")
    if policy.kind == "deterministic_lower":
        return beta
    if policy.kind == "deterministic_midpoint":
        return 0.5 * (beta + eta)
    alpha = beta + (eta - beta) * rng.random()
    return min(max(alpha, beta), eta)


@dataclass(frozen=True)
class RegimeReport:
    global_convergence: bool
    local_rate: bool
    normality: bool
    notes: tuple = ()


def validate_schedule(sched, rho, tau, omega=None):
    """Report which polynomial-schedule condition sets hold.

    (a) global convergence, (b) adds the local rate, (c) adds asymptotic
    normality. ``omega`` is the decay exponent of the regularization bound;
    ``None`` means the regularization vanishes eventually, which drops the
    omega term from (c).
    """
    if not 0 <= rho < 1:
        raise ConfigurationError(f"rho must lie in [0, 1), got {rho}")
    if omega is not None and not omega < 0:
        raise ConfigurationError("omega must be negative")
    c1, c2, c3 = sched.c1, sched.c2, sched.c3
    gap = 1.0 - rho**tau
    notes = []
    a = c1 > 0 and 0.5 < c2 <= 1 and c3 > 1 / c2
    if not 0.5 < c2 <= 1:
        notes.append(f"c2={c2} outside (0.5, 1]")
    if c2 == 1:
        b_ok = c3 > 1 and c1 > max(1.0, c3 - 0.5) / gap
        lead = c3 - 0.5 if omega is None else max(0.5 - omega, c3 - 0.5)
        c_ok = c3 > 1.5 and c1 > lead / gap
    else:
        b_ok = 0.5 < c2 < 1 and c1 > 0 and c3 > 1 / c2
        c_ok = 0.5 < c2 < 1 and c1 > 0 and c3 > max(1.5, 1 / c2)
    b = a and b_ok
    c = b and c_ok
    return RegimeReport(global_convergence=a, local_rate=b, normality=c, notes=tuple(notes))
