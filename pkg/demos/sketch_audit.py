"""How many Kaczmarz steps are enough for the KKT solve?

The expected sketch projection has least eigenvalue gamma_S; each sweep of
tau steps shrinks the squared solve error by rho**tau with rho = 1 - gamma_S.
Monte-Carlo error ratios are compared with that bound.
"""

from aistosqp.harness import ExperimentConfig, cmd_sketch_audit

for problem in ("eq_quadratic", "hs7", "byrdsphr"):
    cfg = ExperimentConfig(problem=problem, sketch="kaczmarz", taus="1,5,20,50", mc_samples=2000)
    report = cmd_sketch_audit(cfg)
    s = report.summary
    print(f"{s['source']}: gamma_S = {s['gamma_S']:.4f}, rho = {s['rho']:.4f}")
    for tau, bound, observed in report.rows:
        print(f"   tau={tau:>3}  rho^tau = {bound:.3e}   MC error ratio = {observed:.3e}")
