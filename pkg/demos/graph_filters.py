"""How far does a Chebyshev filter reach?

A one-hot signal on a single block is filtered with polynomials of growing
order K.  The response is exactly zero beyond K-1 hops, which is why the
filter can be applied with a few sparse-ish matrix products instead of an
eigendecomposition.
"""
import numpy as np

from parkcast.graph import ScaledLaplacian, WeightedGraph, build_weight_matrix, chebyshev_filter

rng = np.random.default_rng(0)

# a ring of 8 blocks, 60-180 s apart, with one shortcut
n = 8
t = np.full((n, n), np.inf)
np.fill_diagonal(t, 0.0)
for i in range(n):
    t[i, (i + 1) % n] = rng.uniform(60, 180)
    t[(i + 1) % n, i] = rng.uniform(60, 180)
t[0, 4] = t[4, 0] = 240.0

g = build_weight_matrix(t)
sl = ScaledLaplacian.from_graph(g)
hops = g.hops()
print(f"lambda_max = {sl.lambda_max:.6f}")
print("hops from block 0:", hops[0].astype(int).tolist())

x = np.zeros((n, 1))
x[0] = 1.0
for K in range(1, 5):
    theta = np.ones((K, 1, 1))
    y = chebyshev_filter(sl, x, theta).data.ravel()
    reach = np.flatnonzero(np.abs(y) > 1e-12)
    print(f"K={K}: nonzero at blocks {reach.tolist()}, max hop {int(hops[0][reach].max())}")
