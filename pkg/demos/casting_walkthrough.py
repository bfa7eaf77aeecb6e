"""
Casting a lookup index, step by step
====================================

Two samples look up rows of one embedding table: sample 0 gathers rows 1, 2
and 4, sample 1 gathers rows 0 and 2. We run the forward pass, then coalesce
the backward gradients two ways and check they agree.
"""

import numpy as np

from tensorcast.kernels import (
    EmbeddingTable,
    LookupIndex,
    casted_gather_reduce,
    coalesce_gradients,
    expand_gradients,
    gather_reduce,
    tensor_casting,
)

# %%
# Row ``i`` of the table holds ``[i, i]`` so sums are easy to read.
table = EmbeddingTable(np.repeat(np.arange(5, dtype=np.float32)[:, None], 2, axis=1))
idx = LookupIndex(src=np.array([1, 2, 4, 0, 2]), dst=np.array([0, 0, 0, 1, 1]), num_outputs=2)
print("forward outputs:\n", gather_reduce(table, idx))

# %%
# Casting swaps the roles of the two index arrays. The table rows become
# the outputs and the batch slots become the rows to gather.
cast = tensor_casting(idx)
print("casted src  ", cast.casted_src)
print("casted dst  ", cast.casted_dst)
print("unique rows ", cast.unique_rows)

# %%
# Backward: one gradient per sample.
grad = np.array([[1.0, 10.0], [100.0, 1000.0]], dtype=np.float32)

# The classic route materialises one gradient per lookup, then sorts and sums.
expanded = expand_gradients(grad, idx)
classic = coalesce_gradients(idx, expanded)

# The casted route is a single gather-reduce over the gradient tensor.
fused = casted_gather_reduce(cast, grad)

for r, a, b in zip(classic.rows, classic.grads, fused.grads):
    print(f"row {r}: classic {a}  casted {b}")
assert np.array_equal(classic.grads, fused.grads)
