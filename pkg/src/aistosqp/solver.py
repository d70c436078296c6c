"""Adaptive inexact stochastic SQP iteration, merit diagnostics and a deterministic SQP oracle.

Each iteration draws one noisy gradient/Hessian sample, builds the KKT matrix
from the average of *past* Hessian samples, approximately solves the Newton
system with a few sketch-and-project sweeps, and takes a random step whose
length is sandwiched between two deterministic sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, OracleFailure, StoSQPError
from .inference import CovarianceAccumulator
from .kkt import PD_FLOOR, HessianAverager, assemble_kkt, constraint_singular_values, kkt_at_point, nullspace_basis, regularize
from .problems import (
    NoiseModel,
    lagrangian_gradient,
    lagrangian_hessian,
    sample_gradient,
    sample_lagrangian_hessian,
)
from .sketch import SketchDistribution, solve_exact, solve_inexact
from .stepsize import Schedule, StepPolicy, draw_stepsize, envelope

__all__ = [
    "DIVERGENCE_RADIUS",
    "RunState",
    "TraceRow",
    "MeritParams",
    "SolverConfig",
    "RunResult",
    "make_streams",
    "init_state",
    "step",
    "run",
    "merit_value",
    "merit_gradient",
    "deterministic_sqp_oracle",
]

DIVERGENCE_RADIUS = 1e8


def make_streams(master_seed, run_index=0):
    """Three independent Philox generators ``(xi, zeta, psi)`` for one run."""
    root = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_index),))
    return tuple(np.random.Generator(np.random.Philox(s)) for s in root.spawn(3))


@dataclass
class RunState:
    x: np.ndarray
    lam: np.ndarray
    averager: HessianAverager
    moments: CovarianceAccumulator
    xi_stream: np.random.Generator
    zeta_stream: np.random.Generator
    psi_stream: np.random.Generator
    t: int = 0
    kkt: Optional[object] = None
    alpha: float = math.nan
    beta: float = math.nan
    # nullspace basis and singular values of a constant Jacobian
    _geometry: Optional[tuple] = field(default=None, repr=False)


def init_state(problem, seed=0, run_index=0, x0=None, lam0=None):
    xi, zeta, psi = make_streams(seed, run_index)
    d = problem.dim_primal
    return RunState(
        x=np.array(problem.x0 if x0 is None else x0, dtype=float),
        lam=np.array(problem.lam0 if lam0 is None else lam0, dtype=float),
        averager=HessianAverager(d),
        moments=CovarianceAccumulator(d),
        xi_stream=xi,
        zeta_stream=zeta,
        psi_stream=psi,
    )


def _geometry(state, problem, G):
    if problem.affine_constraints:
        if state._geometry is None:
            state._geometry = (nullspace_basis(G), constraint_singular_values(G))
        return state._geometry
    return nullspace_basis(G), constraint_singular_values(G)


def step(state, problem, noise, sched, policy, dist, tau, pd_floor=PD_FLOOR):
    """Advance ``state`` by one iteration in place and return it.

    Random draws happen in the order sample (``xi``), sketches (``zeta``),
    stepsize (``psi``), each from its own stream. The Hessian sample drawn here
    enters the average only from the next iteration on.
    """
    x, lam, t = state.x, state.lam, state.t
    g_bar = sample_gradient(problem, x, noise, state.xi_stream)
    H_bar = sample_lagrangian_hessian(problem, x, lam, noise, state.xi_stream)

    G = problem.jac(x)
    Z, svals = _geometry(state, problem, G)
    B, delta = regularize(state.averager.average(), G, t, pd_floor, Z=Z)
    kkt = assemble_kkt(B, G, delta, g_svals=svals)

    d = problem.dim_primal
    rhs = -np.concatenate([g_bar + G.T @ lam, problem.cons(x)])
    if dist.kind == "exact":
        z = solve_exact(kkt.K, rhs, iteration=t)
    else:
        z = solve_inexact(kkt.K, rhs, tau, dist, state.zeta_stream).z

    beta, _, eta, _ = envelope(sched, t)
    alpha = draw_stepsize(policy, beta, eta, state.psi_stream)
    if not beta <= alpha <= eta:
        raise AssertionError(f"stepsize {alpha} escaped [{beta}, {eta}] at iteration {t}")

    x_new = x + alpha * z[:d]
    lam_new = lam + alpha * z[d:]
    size = max(np.abs(x_new).max(), np.abs(lam_new).max())
    if not size <= DIVERGENCE_RADIUS:
        raise DivergenceError(f"iterate diverged (max |entry| = {size:.3g}) at iteration {t}", iteration=t)

    state.averager.push(H_bar)
    state.moments.push(g_bar)
    state.x, state.lam = x_new, lam_new
    state.kkt = kkt
    state.alpha, state.beta = alpha, beta
    state.t = t + 1
    return state


@dataclass(frozen=True)
class MeritParams:
    mu: float
    nu: float

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise ConfigurationError("merit parameters must be non-negative")


@dataclass
class TraceRow:
    t: int
    kkt_residual: float
    iter_error: Optional[float]
    hess_error: Optional[float]
    alpha: float
    beta: float
    delta_mag: float
    merit: Optional[float] = None


@dataclass(frozen=True)
class SolverConfig:
    """Everything one run needs besides the problem."""

    noise: NoiseModel = NoiseModel(1e-2)
    schedule: Schedule = Schedule()
    policy: StepPolicy = StepPolicy()
    sketch: str = "kaczmarz"
    tau: int = 50
    iters: int = 10_000
    stride: int = 100
    seed: int = 0
    run_index: int = 0
    pd_floor: float = PD_FLOOR
    merit: Optional[MeritParams] = None

    def __post_init__(self):
        if self.iters < 1 or self.stride < 1 or self.tau < 1:
            raise ConfigurationError("iters, stride and tau must be positive")

    def distribution(self, problem):
        from .sketch import parse_sketch

        return parse_sketch(self.sketch, problem.dim)


@dataclass
class RunResult:
    trace: list
    x: np.ndarray
    lam: np.ndarray
    state: RunState


def run(problem, config, state=None, observer=None):
    """Run ``config.iters`` iterations, recording a :class:`TraceRow` every ``stride``.

    ``observer(state)`` is called after every iteration when given. Errors
    raised mid-run carry the rows recorded so far in ``exc.trace``.
    """
    dist = config.distribution(problem)
    if state is None:
        state = init_state(problem, config.seed, config.run_index)
    sol = problem.known_solution
    K_star = kkt_at_point(problem, *sol, pd_floor=config.pd_floor).K if sol is not None else None
    trace = []
    try:
        for _ in range(config.iters):
            step(state, problem, config.noise, config.schedule, config.policy, dist, config.tau, config.pd_floor)
            if observer is not None:
                observer(state)
            if state.t % config.stride == 0:
                trace.append(_row(problem, state, sol, K_star, config.merit))
    except StoSQPError as exc:
        exc.trace = trace
        raise
    return RunResult(trace=trace, x=state.x.copy(), lam=state.lam.copy(), state=state)


def _row(problem, state, sol, K_star, merit):
    iter_err = hess_err = None
    if sol is not None:
        iter_err = float(np.sqrt(np.sum((state.x - sol[0]) ** 2) + np.sum((state.lam - sol[1]) ** 2)))
        hess_err = float(np.linalg.norm(state.kkt.K - K_star, 2))
    return TraceRow(
        t=state.t,
        kkt_residual=float(np.linalg.norm(lagrangian_gradient(problem, state.x, state.lam))),
        iter_error=iter_err,
        hess_error=hess_err,
        alpha=state.alpha,
        beta=state.beta,
        delta_mag=state.kkt.delta_magnitude,
        merit=None if merit is None else merit_value(problem, state.x, state.lam, merit),
    )


def merit_value(problem, x, lam, params):
    """Exact augmented Lagrangian ``L + mu/2 ||c||^2 + nu/2 ||grad_x L||^2``."""
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    c = problem.cons(x)
    gl = problem.grad(x) + problem.jac(x).T @ lam
    return float(problem.f(x) + lam @ c + 0.5 * params.mu * c @ c + 0.5 * params.nu * gl @ gl)


def merit_gradient(problem, x, lam, params):
    d = problem.dim_primal
    r = lagrangian_gradient(problem, x, lam)
    H = lagrangian_hessian(problem, x, lam)
    G = problem.jac(np.asarray(x, float))
    gl, c = r[:d], r[d:]
    return np.concatenate([gl + params.nu * H @ gl + params.mu * G.T @ c, c + params.nu * G @ gl])


def deterministic_sqp_oracle(problem, x0=None, lam0=None, max_iter=200, tol=1e-10, pd_floor=PD_FLOOR, history=None):
    """Full-step exact Newton SQP with the same reduced-Hessian regularization.

    Returns the first ``(x, lam)`` with KKT residual at most ``tol``. When a
    list is passed as ``history`` every iterate is appended to it.
    """
    x = np.array(problem.x0 if x0 is None else x0, dtype=float)
    lam = np.array(problem.lam0 if lam0 is None else lam0, dtype=float)
    d = problem.dim_primal
    for k in range(max_iter + 1):
        if history is not None:
            history.append((x.copy(), lam.copy()))
        r = lagrangian_gradient(problem, x, lam)
        if np.linalg.norm(r) <= tol:
            return x, lam
        if k == max_iter:
            break
        kkt = kkt_at_point(problem, x, lam, pd_floor)
        z = solve_exact(kkt.K, -r, iteration=k)
        x = x + z[:d]
        lam = lam + z[d:]
        if not np.all(np.isfinite(x)):
            break
    raise OracleFailure(f"{problem.name}: deterministic SQP did not reach tolerance {tol:g} in {max_iter} iterations")
