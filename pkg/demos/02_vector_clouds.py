"""Build vector-cloud training samples: elliptical regions of influence,
stencil sampling, and the (n, 11) feature matrix.

Run after demo 01:  python3 demos/02_vector_clouds.py
"""

from pathlib import Path

import numpy as np

from cloudop.clouds import (
    FEATURE_COLUMNS,
    build_dataset,
    influence_ellipse,
    save_dataset,
)
from cloudop.flow import load_snapshot

out = Path(__file__).parent / "output"
fld, grid = load_snapshot(out / "snapshot_10.csv")

# The region of influence is an ellipse whose major axis follows the local
# velocity; faster flow stretches it downstream.
for speed in (0.0, 0.5, 1.0, 2.0):
    e = influence_ellipse(np.array([speed, 0.0]), nu=0.02, zeta=9.0, eps=0.01)
    print(f"|u| = {speed:.1f}:  l1 = {e.l1:.3f}, l2 = {e.l2:.3f}")

dataset = build_dataset(
    [fld], [grid], nu=0.02, zeta=9.0, n=20, eps=0.01, seed=0,
    max_samples_per_field=200,
)
print(f"\ndataset: {dataset.n_samples} samples, stencil {dataset.stencil}, "
      f"features {FEATURE_COLUMNS}")
cloud = dataset.sample(0)
nearest = cloud.Q[np.argmax(cloud.Q[:, 9])]
print(f"nearest sampled point: x_rel = {nearest[:2]}, proximity r = {nearest[9]:.2f}")

save_dataset(dataset, out / "clouds.bin")
print("wrote clouds.bin")
