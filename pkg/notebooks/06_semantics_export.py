# %% [markdown]
# Patch labels and attention masks
# ================================
#
# Instance masks are reduced to one label per patch by majority vote (empty
# pixels count as background, ties go to the smaller id).  An allowed-pair
# relation set turns patch labels into an additive attention mask.

# %%
import numpy as np

from exogs.semantics import RelationSet, aggregate_patch_labels, build_attention_mask

rng = np.random.default_rng(1)
inst = np.zeros((32, 48), dtype=np.uint8)
inst[4:20, 8:30] = 1        # robot
inst[14:28, 26:40] = 2      # object
inst[rng.uniform(size=inst.shape) < 0.05] = 255
grid = aggregate_patch_labels(inst, patch_size=8, C=3)
print(grid.labels)

# %%
rel = RelationSet.default(3)
print("allowed pairs:", sorted(rel.allowed))
m = build_attention_mask(grid.labels.ravel(), rel)
print("mask", m.shape, "blocked fraction %.2f" % (m < 0).mean())
