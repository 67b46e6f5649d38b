"""
Point-to-block alignment
========================

The masked support is cut into m x m blocks, the best-covered ones are kept,
and each query pixel attends to every kept block on its own.
"""

import numpy as np

from hybridfss import PositionEmbedding, Projection, p2b_align, p2p_align
from hybridfss.p2b import block_importance, extract_blocks, select_topk

ramp = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
print("4x4 index ramp cut into 2x2 blocks (row-major):")
print(extract_blocks(ramp, 2)[0].astype(int))

mask = np.array([[1, 0, 0, 0],
                 [1, 1, 0, 1],
                 [0, 0, 1, 1],
                 [0, 0, 1, 1]], np.float32)
imp = block_importance(mask, 2)
print("\nmask coverage per block:", imp.tolist())
print("top-2 blocks:", select_topk(imp, 2))
print("ties go to the lower index:", select_topk([0.5, 0.5, 0.5], 2))

rng = np.random.default_rng(1)
C, H, W = 8, 16, 16
q = rng.standard_normal((C, H, W)).astype(np.float32)
s = rng.standard_normal((C, H, W)).astype(np.float32)
m = np.zeros((H, W), np.float32)
m[2:10, 3:12] = 1
proj = Projection.random(C, seed=1)

# one block covering the whole map is plain point-to-point alignment
whole = p2b_align(q, s, m, proj, PositionEmbedding.zeros(H, W), m=H, k=1)
print("\nm = H = W, k = 1 equals p2p_align:", np.allclose(whole, p2p_align(q, s, m, proj), rtol=1e-5, atol=1e-6))

pe = PositionEmbedding.random(H, W, seed=1)
for k in (1, 4, 13, 64):
    out = p2b_align(q, s, m, proj, pe, m=2, k=k)
    print("k=%2d  mean |field| = %.4f" % (k, np.abs(out).mean()))
