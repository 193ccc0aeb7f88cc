"""
Power against fronthaul capacity
================================

A short Monte-Carlo sweep. Each drop places users and draws fading once
and every caching strategy sees the same drop, so differences between
strategies are paired. Powers in the table are per RRH.
"""

from cachecran.harness import emit_results, preset, run_sweep

spec = preset("desk", "fronthaul_capacity", num_drops=4, seed=3)
result = run_sweep(spec)
print(emit_results(result, "csv").decode())

# the saving from caching shrinks as the fronthaul gets faster
for row in result.summary():
    if row.strategy == "none":
        mp = next(r for r in result.summary() if r.strategy == "most_popular" and r.value == row.value)
        print(f"{row.value / 1e6:5.0f} Mbps: caching saves {(row.mean_power_W - mp.mean_power_W) * 1e3:.4f} mW per RRH")
