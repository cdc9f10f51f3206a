"""
Label skew from a Dirichlet draw
================================

Smaller alpha concentrates each class on fewer clients.
"""

# %%
import numpy as np

from fslsage.data import class_proportions, dirichlet_partition, gen_gaussian_mixture

ds = gen_gaussian_mixture(8000, 20, 5, 3.0, seed=0)

# %%
np.set_printoptions(precision=2, suppress=True)
for alpha in (0.1, 1.0, 100.0):
    shards = dirichlet_partition(ds.labels, 4, alpha, seed=1)
    print(f"alpha = {alpha}")
    for s in shards:
        print(f"  client {s.client_id}: {len(s):5d} samples, classes "
              f"{class_proportions(s, ds.labels, ds.n_classes)}")
