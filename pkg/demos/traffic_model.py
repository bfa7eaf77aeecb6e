"""
How many bytes each primitive moves
===================================

Ten lookups per output, 64-wide float32 rows. We sweep the number of unique
rows ``U`` from "every lookup distinct" down to heavy reuse.
"""

from tensorcast import traffic as tr

B = 2048
L = 10 * B

# %%
print(f"{'U/L':>6} {'GR':>10} {'E+C':>10} {'casted':>10} {'casted/(E+C)':>13}")
for frac in (1.0, 0.5, 0.25, 0.1, 0.01):
    p = tr.TrafficParams(L=L, B=B, U=max(1, int(frac * L)), D=64)
    r = {x.primitive: x.element_bytes for x in tr.all_reports(p)}
    ec = r["expand"] + r["coalesce"]
    print(f"{frac:6.2f} {r['gather_reduce']:10d} {ec:10d} "
          f"{r['casted_gather_reduce']:10d} {r['casted_gather_reduce'] / ec:13.3f}")

# %%
# The same numbers as CSV, index bytes included.
print(tr.to_csv(tr.all_reports(tr.TrafficParams(L=L, B=B, U=L // 4, D=64))))
