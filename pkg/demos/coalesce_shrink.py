"""
Larger batches coalesce better
==============================

With a fixed skewed distribution, the fraction of lookups that hit a row
not seen earlier in the batch falls as the batch grows.
"""

from tensorcast import workload as wk

n = 10**6
cfg = wk.ModelConfig("one-table", num_tables=1, gathers_per_table=10, table_rows=n)

# %%
for name, dist in (("zipf 1.05", wk.LookupDistribution.zipf(n, 1.05)),
                   ("uniform", wk.LookupDistribution.uniform(n))):
    print(name)
    for r in wk.coalesce_shrink(cfg, dist, [1024, 4096, 16384], seed=0):
        print(f"  batch {r.batch:6d}: expanded {r.expanded_size:4.1f}x, "
              f"coalesced {r.coalesced_size:5.2f}x, U/L {r.shrink:.3f}")
