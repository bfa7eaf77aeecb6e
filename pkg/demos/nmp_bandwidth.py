"""
Effective bandwidth of the rank-interleaved memory node
=======================================================

Rows are spread round-robin over 32 ranks, so the busiest rank sets the
time. Skewed lookups pile up on a few ranks; coalescing first removes the
repeats.
"""

import numpy as np

from tensorcast import nmpsim
from tensorcast.workload import LookupDistribution

cfg = nmpsim.NmpConfig()
rng = np.random.default_rng(0)
n_rows, L = 10**6, 10**5


def bw(rows):
    res = nmpsim.execute(nmpsim.NmpInstruction("gather_reduce", 0, rows, 256), cfg)
    return res.effective_bw / 1e9


# %%
uniform = LookupDistribution.uniform(n_rows).sample(L, rng)
print(f"uniform rows          {bw(uniform):7.1f} GB/s (peak {cfg.peak_bw / 1e9:.1f})")

# %%
zipf = LookupDistribution.zipf(n_rows, 1.05).sample(L, rng)
print(f"zipf, raw stream      {bw(zipf):7.1f} GB/s")
print(f"zipf, unique rows     {bw(np.unique(zipf)):7.1f} GB/s")

# %%
print(f"one rank only         {bw(np.arange(0, 32 * 1000, 32)):7.1f} GB/s")
