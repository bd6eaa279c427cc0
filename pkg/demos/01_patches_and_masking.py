"""Patchify a synthetic cloud and inspect the masked/visible split.

Walks the first stage of the pipeline: farthest point sampling spreads
centers over the shape, KNN collects k points per center, offsets are
normalized to the center, and a random mask hides a high fraction of whole
patches.
"""

import numpy as np

from cloudmae import (SyntheticSpec, build_patches, gen_synthetic, random_mask,
                      save_ply, split_patches)

cloud = gen_synthetic(SyntheticSpec(family="torus", points=1024, noise_sigma=0.0,
                                    seed=7))
print(f"torus with p={cloud.p} points, max radius "
      f"{np.linalg.norm(cloud.points, axis=1).max():.3f}")

patches = build_patches(cloud, n=64, k=32, seed=1)
print(f"patch set: centers {patches.centers.shape}, offsets {patches.patches.shape}")
print(f"center offset inside its own patch is exactly zero: "
      f"{np.array_equal(patches.patches[0][patches.point_indices[0] == patches.center_indices[0]], np.zeros((1, 3)))}")

spec = random_mask(64, 0.6, seed=42)
(visible, visible_centers), (target, target_centers) = split_patches(patches, spec)
print(f"mask ratio 0.6 over 64 patches -> {len(spec.masked)} masked, "
      f"{len(spec.visible)} visible")
print(f"ground-truth target tensor: {target.shape}")

# color the surviving points blue and the hidden patches red
visible_pts = cloud.points[np.unique(patches.point_indices[spec.visible])]
hidden_pts = cloud.points[np.unique(patches.point_indices[spec.masked])]
save_ply("masking_demo.ply", [visible_pts, hidden_pts],
         colors=[(70, 130, 220), (220, 80, 60)])
print("wrote masking_demo.ply (blue = visible to the encoder, red = masked)")
