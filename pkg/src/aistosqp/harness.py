"""Experiment harness: traces, normality and coverage studies, sketch audits, complexity.

Every command takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentReport` holding an optional CSV table plus a JSON-ready
summary. Nothing here reads the clock, so identical configs give identical
bytes.

Monte-Carlo commands run the ``exact`` and ``kaczmarz`` sketches in lockstep
batches (see :mod:`aistosqp.batch`); other sketches fall back to one run at a
time. Runs that diverge are excluded from the statistics and listed under
``failures``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .batch import run_batch
from .errors import ConfigurationError, DegenerateDirectionError, StoSQPError
from .inference import (
    ConfidenceQuery,
    confidence_interval,
    covariance_estimate,
    exact_covariance_oracle,
    normality_diagnostics,
)
from .kkt import kkt_at_point
from .problems import NoiseModel, builtin_problem, list_problems, lagrangian_gradient
from .sketch import contraction_audit, parse_sketch, solve_exact, solve_inexact
from .solver import SolverConfig, init_state, run
from .stepsize import Schedule, StepPolicy

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "PRESETS",
    "TRACE_COLUMNS",
    "parse_config",
    "cmd_run",
    "cmd_normality",
    "cmd_coverage",
    "cmd_sketch_audit",
    "cmd_complexity",
    "cmd_list_problems",
    "main",
]

TRACE_COLUMNS = ("t", "kkt_residual", "iter_error", "hess_error", "alpha", "beta", "delta_mag", "theory_rate")

_POLICY_NAMES = {
    "uniform": "uniform_random",
    "lower": "deterministic_lower",
    "midpoint": "deterministic_midpoint",
}

# seeds for auxiliary streams (oracle Monte-Carlo, audit matrices) live far
# away from run indices so they never collide with a run's streams
_AUX_KEY = 2**40


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; serializes to ``key = value`` lines.

    ``w`` is a sparse direction ``index:value,...`` with 1-based indices over
    the stacked vector ``(x, lam)``; empty means ``e_1 + e_{d+1}``. ``eps`` and
    ``taus`` are comma-separated lists.
    """

    problem: str = "eq_quadratic"
    sigma2: float = 1e-2
    c1: float = 2.0
    c2: float = 0.6
    c3: float = 2.0
    tau: int = 50
    sketch: str = "kaczmarz"
    policy: str = "uniform"
    iters: int = 10_000
    stride: int = 100
    seed: int = 0
    runs: int = 200
    burnin: float = 0.5
    level: float = 0.95
    w: str = ""
    mode: str = "mc"
    eps: str = "0.1,0.03,0.01"
    taus: str = "1,5,20,50"
    mc_samples: int = 2000
    matrix: str = "problem"
    slope_from: int = 100

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigurationError("sigma2 must be non-negative")
        for name in ("tau", "iters", "stride", "runs", "mc_samples", "slope_from"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.policy not in _POLICY_NAMES:
            raise ConfigurationError(f"unknown policy {self.policy!r}; choose from {sorted(_POLICY_NAMES)}")
        if self.mode not in ("mc", "within"):
            raise ConfigurationError(f"unknown normality mode {self.mode!r}; use mc or within")
        if not 0 <= self.burnin < 1:
            raise ConfigurationError("burnin must lie in [0, 1)")
        if not 0 < self.level < 1:
            raise ConfigurationError("level must lie in (0, 1)")
        self.schedule()  # validates c1, c2, c3

    # -- derived objects -------------------------------------------------

    def schedule(self):
        return Schedule(self.c1, self.c2, self.c3)

    def solver_config(self, run_index=0):
        return SolverConfig(
            noise=NoiseModel(self.sigma2),
            schedule=self.schedule(),
            policy=StepPolicy(_POLICY_NAMES[self.policy]),
            sketch=self.sketch,
            tau=self.tau,
            iters=self.iters,
            stride=self.stride,
            seed=self.seed,
            run_index=run_index,
        )

    def direction(self, d, m):
        w = np.zeros(d + m)
        if not self.w.strip():
            w[0] = 1.0
            w[d] = 1.0
            return w
        for item in self.w.split(","):
            idx, sep, val = item.partition(":")
            if not sep:
                raise ConfigurationError(f"direction entry {item!r} is not index:value")
            k = int(idx)
            if not 1 <= k <= d + m:
                raise ConfigurationError(f"direction index {k} outside 1..{d + m}")
            w[k - 1] = float(val)
        return w

    def eps_list(self):
        return [float(v) for v in self.eps.split(",") if v.strip()]

    def tau_list(self):
        return [int(v) for v in self.taus.split(",") if v.strip()]

    # -- text form ---------------------------------------------------------

    def serialize(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_CASTS = {"str": str, "float": float, "int": int}

PRESETS = {
    "desk": {},
    "paper": {"iters": 100_000, "stride": 100, "tau": 50, "runs": 1, "mode": "within"},
}


def _cast(key, raw):
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _CASTS[_FIELD_TYPES[key]]
    try:
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from exc


def parse_config(text, base=None):
    """Read ``key = value`` lines (``#`` starts a comment) on top of ``base``."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {n}: expected 'key = value', got {line!r}")
        key = key.strip()
        values[key] = _cast(key, raw.strip())
    return (base or ExperimentConfig()).replace(**values)


@dataclass
class ExperimentReport:
    command: str
    config: ExperimentConfig
    summary: dict
    columns: tuple = ()
    rows: list = field(default_factory=list)
    ok: bool = True

    def csv_text(self):
        if not self.columns:
            return ""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def json_text(self):
        doc = {
            "command": self.command,
            "provenance": {
                "config_hash": self.config.digest(),
                "seed": self.config.seed,
                "version": __version__,
            },
            "config": {f.name: getattr(self.config, f.name) for f in fields(self.config)},
            "summary": self.summary,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _aux_rng(seed, tag):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_AUX_KEY + tag,))
    return np.random.Generator(np.random.Philox(ss))


def _needs_solution(problem, command):
    if problem.known_solution is None:
        raise ConfigurationError(f"{command} needs a known solution; {problem.name!r} has none")


# ---------------------------------------------------------------------------
# ensembles of independent runs


@dataclass
class _Ensemble:
    """Final states of ``runs`` independent runs; failed runs have ``alive`` False."""

    x: np.ndarray
    lam: np.ndarray
    K: np.ndarray
    accumulators: list
    alive: np.ndarray
    failures: dict


def _simulate(problem, cfg, per_iteration=None):
    """Run ``cfg.runs`` runs. ``per_iteration(t, residuals, idx)`` sees KKT residuals.

    ``idx`` tells which runs ``residuals`` belongs to (all runs in batch mode,
    a single run otherwise).
    """
    R = cfg.runs
    base = cfg.solver_config()
    kind = parse_sketch(cfg.sketch, problem.dim).kind
    all_idx = np.arange(R)
    if kind in ("exact", "coordinate") and problem.vectorized:
        observer = None
        if per_iteration is not None:
            def observer(state):
                per_iteration(state.t, state.kkt_residuals(problem), all_idx)
        st = run_batch(problem, base, all_idx, observer=observer)
        accs = [st.accumulator(r) for r in range(R)]
        return _Ensemble(st.x, st.lam, st.K, accs, st.active.copy(), dict(st.failures))

    d, m = problem.dim_primal, problem.dim_dual
    ens = _Ensemble(np.zeros((R, d)), np.zeros((R, m)), np.zeros((R, d + m, d + m)),
                    [None] * R, np.ones(R, dtype=bool), {})
    for r in range(R):
        idx = all_idx[r:r + 1]
        observer = None
        if per_iteration is not None:
            def observer(state, idx=idx):
                res = np.linalg.norm(lagrangian_gradient(problem, state.x, state.lam))
                per_iteration(state.t, np.array([res]), idx)
        state = init_state(problem, cfg.seed, r)
        try:
            run(problem, dataclasses.replace(base, run_index=r, stride=base.iters), state=state, observer=observer)
        except StoSQPError as exc:
            ens.failures[r] = str(exc)
            ens.alive[r] = False
        ens.x[r], ens.lam[r] = state.x, state.lam
        if state.kkt is not None:
            ens.K[r] = state.kkt.K
        ens.accumulators[r] = state.moments
    return ens


def _failure_list(failures):
    return [{"run": int(k), "reason": v} for k, v in sorted(failures.items())]


# ---------------------------------------------------------------------------
# commands


def cmd_run(cfg):
    """Single run (run index 0); one trace row every ``stride`` iterations."""
    problem = builtin_problem(cfg.problem)
    sched = cfg.schedule()
    status, trace, result = "ok", [], None
    try:
        result = run(problem, cfg.solver_config())
        trace = result.trace
    except StoSQPError as exc:
        status, trace = f"error: {exc}", getattr(exc, "trace", [])
    rows = []
    for r in trace:
        theory = math.sqrt(sched.beta(r.t) * math.log(r.t)) if r.t >= 1 else None
        rows.append((r.t, r.kkt_residual, r.iter_error, r.hess_error, r.alpha, r.beta, r.delta_mag, theory))
    summary = {"status": status, "rows": len(rows)}
    if rows:
        last = trace[-1]
        summary.update(final_t=last.t, final_kkt_residual=last.kkt_residual, final_iter_error=last.iter_error)
    if result is not None:
        summary.update(x=result.x.tolist(), lam=result.lam.tolist())
    return ExperimentReport("run", cfg, summary, TRACE_COLUMNS, rows, ok=status == "ok")


def _oracle_xi(problem, cfg):
    dist = parse_sketch(cfg.sketch, problem.dim)
    return exact_covariance_oracle(problem, NoiseModel(cfg.sigma2), cfg.schedule(), dist, cfg.tau,
                                   mc_samples=cfg.mc_samples, rng=_aux_rng(cfg.seed, 1))


def cmd_normality(cfg):
    """Normality of the iterate error, within one run (``mode=within``) or across runs (``mode=mc``).

    MC mode standardizes the final error of each run as
    ``w^T error / sqrt(beta_T * w^T Xi* w)`` with the oracle covariance and
    compares it with N(0, 1) as is. Within-run mode collects the first primal
    and dual coordinates after burn-in and compares their fitted normal.
    """
    problem = builtin_problem(cfg.problem)
    _needs_solution(problem, "normality")
    x_star, lam_star = problem.known_solution
    d, m = problem.dim_primal, problem.dim_dual

    if cfg.mode == "within":
        start = int(math.floor(cfg.burnin * cfg.iters))
        rows = []

        def collect(state):
            if state.t > start:
                rows.append((state.t, state.x[0] - x_star[0], state.lam[0] - lam_star[0]))

        status = "ok"
        try:
            run(problem, dataclasses.replace(cfg.solver_config(), stride=cfg.iters), observer=collect)
        except StoSQPError as exc:
            status = f"error: {exc}"
        summary = {"mode": "within", "status": status, "burnin_iterations": start, "samples": len(rows)}
        if len(rows) >= 50:
            for col, name in ((1, "x1"), (2, "lam1")):
                rep = normality_diagnostics([r[col] for r in rows])
                summary[name] = dataclasses.asdict(rep)
        return ExperimentReport("normality", cfg, summary, ("t", "x1_err", "lam1_err"), rows, ok=status == "ok")

    if cfg.runs < 50:
        raise ConfigurationError("MC normality needs at least 50 runs")
    w = cfg.direction(d, m)
    xi = _oracle_xi(problem, cfg)
    var = float(w @ xi @ w)
    ens = _simulate(problem, cfg)
    err = np.hstack([ens.x - x_star, ens.lam - lam_star]) @ w
    beta_T = cfg.schedule().beta(cfg.iters)
    degenerate = not var > 0
    scale = 1.0 if degenerate else math.sqrt(beta_T * var)
    samples = err / scale
    live = samples[ens.alive]
    summary = {"mode": "mc", "runs": cfg.runs, "completed": int(ens.alive.sum()),
               "w_xi_w": var, "beta_T": beta_T, "failures": _failure_list(ens.failures)}
    if degenerate:
        summary.update(degenerate=True, ks_stat=1.0)
    elif live.size >= 50:
        raw = normality_diagnostics(live, standardize=False)
        fitted = normality_diagnostics(live, standardize=True)
        summary.update(degenerate=False, ks_stat=raw.ks_stat, mean=raw.mean, variance=raw.variance,
                       ks_stat_fitted=fitted.ks_stat)
    rows = [(r, samples[r] if ens.alive[r] else None) for r in range(cfg.runs)]
    return ExperimentReport("normality", cfg, summary, ("run", "standardized_error"), rows)


def cmd_coverage(cfg):
    """Empirical coverage of ``w^T (x*, lam*)`` by the online confidence interval at ``t = T``."""
    problem = builtin_problem(cfg.problem)
    _needs_solution(problem, "coverage")
    if cfg.runs < 100:
        raise ConfigurationError("coverage needs at least 100 runs")
    d, m = problem.dim_primal, problem.dim_dual
    sched = cfg.schedule()
    query = ConfidenceQuery(cfg.direction(d, m), cfg.level)
    target = float(query.w @ np.concatenate(problem.known_solution))
    ens = _simulate(problem, cfg)
    rows, covered, widths, degenerate = [], 0, [], {}
    for r in range(cfg.runs):
        if not ens.alive[r]:
            rows.append((r, None, None, None))
            continue
        try:
            xi = covariance_estimate(ens.accumulators[r], ens.K[r], sched)
            lo, hi = confidence_interval(ens.x[r], ens.lam[r], xi, query, cfg.iters, sched)
        except DegenerateDirectionError as exc:
            degenerate[r] = str(exc)
            rows.append((r, None, None, None))
            continue
        hit = int(lo <= target <= hi)
        covered += hit
        widths.append(hi - lo)
        rows.append((r, lo, hi, hit))
    n = len(widths)
    summary = {
        "target": target,
        "level": cfg.level,
        "runs": cfg.runs,
        "evaluated": n,
        "coverage": covered / n if n else None,
        "mean_width": float(np.mean(widths)) if n else None,
        "degenerate": _failure_list(degenerate),
        "failures": _failure_list(ens.failures),
    }
    return ExperimentReport("coverage", cfg, summary, ("run", "lo", "hi", "covered"), rows)


def _audit_matrix(cfg):
    if cfg.matrix.startswith("random:"):
        n = int(cfg.matrix.split(":", 1)[1])
        rng = _aux_rng(cfg.seed, 2)
        while True:
            A = rng.standard_normal((n, n))
            K = A + A.T
            if np.linalg.cond(K) < 1e8:
                return K, f"random symmetric {n}x{n}"
    if cfg.matrix != "problem":
        raise ConfigurationError(f"unknown audit matrix {cfg.matrix!r}; use problem or random:n")
    problem = builtin_problem(cfg.problem)
    point = problem.known_solution or (problem.x0, problem.lam0)
    return kkt_at_point(problem, *point).K, f"{problem.name} KKT matrix"


def cmd_sketch_audit(cfg):
    """Contraction factor of the sketch and Monte-Carlo error ratios for several ``tau``."""
    K, source = _audit_matrix(cfg)
    n = K.shape[0]
    dist = parse_sketch(cfg.sketch, n)
    rng = _aux_rng(cfg.seed, 3)
    audit = contraction_audit(K, dist, mc_samples=cfg.mc_samples, rng=rng)
    rhs = rng.standard_normal(n)
    z_star = solve_exact(K, rhs)
    ref = float(z_star @ z_star)
    rows = []
    for tau in cfg.tau_list():
        if dist.kind == "exact":
            sq = 0.0
        else:
            sq = np.mean([np.sum((solve_inexact(K, rhs, tau, dist, rng).z - z_star) ** 2)
                          for _ in range(cfg.mc_samples)])
        rows.append((tau, audit.rho ** tau, sq / ref))
    summary = {"source": source, "n": n, "sketch": cfg.sketch, "gamma_S": audit.gamma_S, "rho": audit.rho,
               "mc_samples": cfg.mc_samples,
               "by_tau": [{"tau": t, "rho_tau": q, "mc_error_ratio": e} for t, q, e in rows]}
    return ExperimentReport("sketch-audit", cfg, summary, ("tau", "rho_tau", "mc_error_ratio"), rows)


class _ComplexityTracker:
    def __init__(self, runs, eps, slope_from, iters):
        self.sum = np.zeros(runs)
        self.sum_sq = np.zeros(runs)
        self.eps = eps
        self.hit = np.full((runs, len(eps)), -1, dtype=np.int64)
        self.t_lo = slope_from
        self.at_lo = np.full(runs, np.nan)
        self.at_hi = np.full(runs, np.nan)
        self.iters = iters

    def __call__(self, t, res, idx):
        self.sum[idx] += res
        self.sum_sq[idx] += res * res
        mean = self.sum[idx] / t
        for j, e in enumerate(self.eps):
            fresh = (self.hit[idx, j] < 0) & (mean <= e)
            self.hit[idx[fresh], j] = t
        if t == self.t_lo:
            self.at_lo[idx] = self.sum_sq[idx] / t
        if t == self.iters:
            self.at_hi[idx] = self.sum_sq[idx] / t


def cmd_complexity(cfg):
    """First ``t`` with running-mean KKT residual below each ``eps``, plus the decay slope.

    The slope is the log-log slope of the running mean of ``||grad L_t||^2``
    between ``slope_from`` and ``iters``, one value per run, averaged.
    """
    problem = builtin_problem(cfg.problem)
    eps = cfg.eps_list()
    if not eps:
        raise ConfigurationError("complexity needs at least one eps")
    if cfg.slope_from >= cfg.iters:
        raise ConfigurationError("slope_from must be below iters")
    tracker = _ComplexityTracker(cfg.runs, eps, cfg.slope_from, cfg.iters)
    ens = _simulate(problem, cfg, per_iteration=tracker)
    alive = ens.alive
    slopes = np.log(tracker.at_hi / tracker.at_lo) / math.log(cfg.iters / cfg.slope_from)
    rows, table = [], []
    for j, e in enumerate(eps):
        hits = tracker.hit[alive, j]
        censored = int(np.sum(hits < 0))
        reached = hits[hits >= 0]
        # censored runs count as +inf, so the median is finite only if most runs reached eps
        med = float(np.median(np.where(hits < 0, np.inf, hits))) if hits.size else math.inf
        table.append({"eps": e, "median_T_eps": med if math.isfinite(med) else None,
                      "censored": censored, "reached": int(reached.size)})
    for r in range(cfg.runs):
        for j, e in enumerate(eps):
            h = int(tracker.hit[r, j])
            rows.append((r, e, h if h >= 0 else None, int(h < 0), slopes[r] if alive[r] else None))
    summary = {
        "runs": cfg.runs,
        "completed": int(alive.sum()),
        "T_eps": table,
        "slope_window": [cfg.slope_from, cfg.iters],
        "mean_slope": float(np.mean(slopes[alive])) if alive.any() else None,
        "failures": _failure_list(ens.failures),
    }
    return ExperimentReport("complexity", cfg, summary, ("run", "eps", "T_eps", "censored", "slope"), rows)


def cmd_list_problems(cfg=None):
    rows = []
    for name in list_problems():
        p = builtin_problem(name)
        rows.append((name, p.dim_primal, p.dim_dual, p.description))
    cfg = cfg or ExperimentConfig()
    return ExperimentReport("list-problems", cfg, {"problems": [r[0] for r in rows]},
                            ("name", "d", "m", "description"), rows)


COMMANDS = {
    "run": cmd_run,
    "normality": cmd_normality,
    "coverage": cmd_coverage,
    "sketch-audit": cmd_sketch_audit,
    "complexity": cmd_complexity,
    "list-problems": cmd_list_problems,
}


# ---------------------------------------------------------------------------
# command line


def _build_parser():
    parser = argparse.ArgumentParser(prog="aistosqp", description="AI-StoSQP experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value file; flags override it")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", type=Path, help="CSV destination; the JSON summary goes next to it")
        if name == "list-problems":
            continue
        for f in fields(ExperimentConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, default=None, help=f"default {f.default!r}")
    return parser


def resolve_config(args):
    """Defaults, then the preset, then the config file, then explicit flags."""
    cfg = ExperimentConfig()
    if getattr(args, "preset", None):
        cfg = cfg.replace(**PRESETS[args.preset])
    if getattr(args, "config", None):
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc.strerror}") from exc
        cfg = parse_config(text, cfg)
    overrides = {f.name: _cast(f.name, getattr(args, f.name))
                 for f in fields(ExperimentConfig) if getattr(args, f.name, None) is not None}
    return cfg.replace(**overrides)


def _write(path, text):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}: {exc.strerror}") from exc


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        report = COMMANDS[args.command](cfg)
        if args.out is not None:
            if report.columns:
                _write(args.out, report.csv_text())
            _write(args.out.with_suffix(".json"), report.json_text())
            sys.stdout.write(json.dumps(_jsonable(report.summary), sort_keys=True) + "\n")
        elif args.command == "run":
            sys.stdout.write(report.csv_text())
        elif args.command == "list-problems":
            for name, d, m, desc in report.rows:
                sys.stdout.write(f"{name:14s} d={d} m={m}  {desc}\n")
        else:
            sys.stdout.write(report.json_text())
    except ConfigurationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 0 if report.ok else 1
