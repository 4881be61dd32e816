"""
Sampling, grouping and interpolation on a toy cloud
====================================================

"""
import numpy as np

from pcan import pointops as po

rng = np.random.default_rng(0)

# a flat square of points plus a few stragglers above it
square = np.c_[rng.uniform(-0.5, 0.5, (200, 2)), np.zeros(200)]
stray = rng.uniform(-1, 1, (8, 3))
cloud = np.vstack([square, stray])

# farthest point sampling: each pick is the point farthest from those already chosen,
# so the sample reaches the stragglers early
picks = po.farthest_point_sample(cloud, 16)
print("first picks:", picks[:6], "(stragglers have index >= 200)")
print("min distance to earlier picks:", np.round(po.fps_min_distances(cloud, picks), 3))

# ball query around every pick; rows with fewer hits repeat their first neighbour
groups = po.ball_query(cloud, picks, radius=0.2, k=8)
for c, row in zip(picks[:4], groups.neighbors[:4]):
    print(f"centroid {c:3d} -> {row}")

# grouped coordinates are relative to the centroid
rel = po.group_points(cloud, None, groups).data
print("grouped tensor:", rel.shape, "centroid row is zero:", np.allclose(rel[0, 0], 0))

# inverse-distance interpolation back from the 16 picks to every point
idx, w = po.three_nn_weights(cloud, cloud[picks])
coarse_value = np.linalg.norm(cloud[picks], axis=1, keepdims=True)
dense = po.interpolate(coarse_value, idx, w).data
print("interpolated |x| at the picks equals the coarse value:",
      np.allclose(dense[picks], coarse_value))
