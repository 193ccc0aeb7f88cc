"""
Checking the solver against brute force
=======================================

On a two-RRH, two-user, four-subchannel cell every integer decision can be
enumerated. The oracle does that with its own convex solver, so it gives
an independent reference for the recovered power and for the dual bound.
"""

from cachecran.harness import solve_scenario
from cachecran.model import SystemConfig
from cachecran.oracle import TinyInstanceGuard, brute_force_optimum
from cachecran.scenario import generate_scenario, noise_power

cfg = SystemConfig(2, 2, 4, 3, 20e6, noise_power(20e6, 4), 40e6, 20e6, 1)
guard = TinyInstanceGuard()
print("skeletons to enumerate:", guard.count(cfg))

for seed, strategy in [(0, "most_popular"), (1, "probabilistic"), (2, "none")]:
    sc = generate_scenario(cfg, seed, strategy)
    out = solve_scenario(sc)
    ref = brute_force_optimum(sc.channel, sc.content, sc.config, guard)
    print(f"seed {seed} {strategy:>13}: dual {out.dual.g * 1e3:.4f} mW  "
          f"oracle {ref.total_power * 1e3:.4f} mW  recovered {out.recovery.power * 1e3:.4f} mW  "
          f"({ref.solved} restricted programs solved)")
