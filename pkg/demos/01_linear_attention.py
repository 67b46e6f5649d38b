"""
Decomposed linear attention
===========================

Query pixels attend to a masked support map. Forming the C x C context first
gives the same answer as the explicit HW x HW attention map, at a fraction of
the cost.
"""

import time

import numpy as np

from hybridfss import Projection, explicit_attention_oracle, p2p_align
from hybridfss.p2p import attention_flops
from hybridfss.tensor import max_relative_error

rng = np.random.default_rng(0)
C, H, W = 32, 24, 24
query = rng.standard_normal((C, H, W)).astype(np.float32)
support = rng.standard_normal((C, H, W)).astype(np.float32)
mask = np.zeros((H, W), np.float32)
mask[6:18, 4:14] = 1
proj = Projection.random(C, seed=0)

# factored: ReLU(Q) @ (softmax(K)^T @ V)
fast = p2p_align(query, support, mask, proj)
# explicit: (ReLU(Q) @ softmax(K)^T) @ V in float64
slow = explicit_attention_oracle(query.astype(np.float64), support.astype(np.float64), mask,
                                 proj.astype(np.float64), flag="unfactored")
print("output shape:", fast.shape)
print("max relative error vs explicit map: %.2e" % max_relative_error(fast, slow))

# background support tokens can also be dropped from the key softmax
strict = p2p_align(query, support, mask, proj, exclude_masked_tokens=True)
print("excluding masked tokens changes the field by %.3f (relative)" % max_relative_error(strict, fast))

for tokens in (576, 2304, 9216):
    print("tokens=%5d  explicit/factored multiply-adds: %.0fx"
          % (tokens, attention_flops("na", tokens, C) / attention_flops("ours", tokens, C)))

t0 = time.perf_counter()
for _ in range(20):
    p2p_align(query, support, mask, proj)
t1 = time.perf_counter()
for _ in range(20):
    explicit_attention_oracle(query, support, mask, proj, flag="unfactored")
t2 = time.perf_counter()
print("factored %.2f ms, explicit %.2f ms per call" % ((t1 - t0) * 50, (t2 - t1) * 50))
