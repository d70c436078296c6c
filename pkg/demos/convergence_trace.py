"""Watch one run of the solver settle onto the solution of hs48.

The KKT residual is printed next to sqrt(beta_t log t), the envelope the
iterates are expected to track once the early transient has died out.
"""

import math

from aistosqp import NoiseModel, Schedule, SolverConfig, builtin_problem, run

problem = builtin_problem("hs48")
schedule = Schedule(c1=2.0, c2=0.6, c3=2.0)
config = SolverConfig(noise=NoiseModel(1e-2), schedule=schedule, sketch="kaczmarz", tau=50,
                      iters=20_000, stride=2_000, seed=1)

result = run(problem, config)
print(f"{problem.name}: {problem.description}")
print(f"{'t':>7} {'KKT residual':>13} {'error':>10} {'envelope':>10}")
for row in result.trace:
    envelope = math.sqrt(schedule.beta(row.t) * math.log(row.t))
    print(f"{row.t:>7} {row.kkt_residual:>13.3e} {row.iter_error:>10.3e} {envelope:>10.3e}")

# The residual falls well below the envelope: the envelope is an upper rate,
# and hs48 is a convex quadratic with linear constraints.
print("final x:", result.x.round(4))
