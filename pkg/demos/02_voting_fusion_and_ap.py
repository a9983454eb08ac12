"""Ten-crop views, weighted late fusion and average precision on small arrays."""
import numpy as np

from oscnn import depth_ensemble_spec, fuse, mean_ap, object_scene_spec, ScoreMatrix
from oscnn.evaluation import ap_oracle, average_precision, pr_curve
from oscnn.images import ten_crop, ten_crop_offsets

#%%
# where the ten views come from on a 256-pixel image with 224-pixel crops
print(ten_crop_offsets(256, 256, 224))
views = ten_crop(np.zeros((3, 256, 256), np.uint8), 224)
for (top, left), flipped in views.records:
    print(f"top={top:3d} left={left:3d} mirrored={flipped}")

#%%
# ranked list: hit, miss, hit, hit
curve = pr_curve([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1])
print("recall   ", curve.recall)
print("precision", curve.precision)
print("AP", average_precision(curve), "oracle", ap_oracle([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1]))

#%%
# two streams that are each wrong on a different half of the images
rng = np.random.default_rng(0)
labels = np.repeat(np.arange(4), 5)
truth = np.eye(4)[labels]
noise = rng.dirichlet(np.ones(4), size=20)
obj = np.where(np.arange(20)[:, None] < 10, 0.7 * truth + 0.3 * noise, noise)
scene = np.where(np.arange(20)[:, None] >= 10, 0.7 * truth + 0.3 * noise, noise)
ids, classes = tuple(f"img{i}" for i in range(20)), ("a", "b", "c", "d")
o, s = ScoreMatrix(ids, classes, obj), ScoreMatrix(ids, classes, scene)
print("object only ", round(mean_ap(obj, labels).mean_ap, 4))
print("scene only  ", round(mean_ap(scene, labels).mean_ap, 4))
print("fused 1:1   ", round(mean_ap(fuse(object_scene_spec("o", "s"), [o, s]).values, labels).mean_ap, 4))
print("depth 0.3/0.6", depth_ensemble_spec("deep", "verydeep").components)
