"""
Training-iteration timelines for the four designs
=================================================

Stage costs come from the traffic model (host), the rank model (near-memory
node) and simple GPU throughput figures. A smaller table keeps this quick.
"""

from tensorcast import harness, pipeline as pl

cfg = harness.ExperimentConfig.from_dict({"model": "RM1", "table_rows": 200_000})
timelines = harness.run_cell(cfg, batch=2048, dim=64)
ref = timelines[pl.Design.BASELINE_CPU]

# %%
for design, tl in timelines.items():
    print(f"{design.value:12s} {tl.iteration_time * 1e3:8.2f} ms  "
          f"speedup {pl.speedup(ref, tl):5.2f}x  NMP busy {pl.nmp_utilization(tl):6.1%}")

# %%
# Where the time goes in the fastest design.
print(timelines[pl.Design.OURS_NMP].to_csv())
