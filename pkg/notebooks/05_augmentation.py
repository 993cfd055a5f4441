# %% [markdown]
# Augmentation plans
# ==================
#
# One demonstration becomes many episodes.  Every random draw comes from a
# counter-based generator keyed by (seed, episode, strategy, draw), so
# episodes are independent of each other and of the worker count.

# %%
import tempfile
from pathlib import Path

import numpy as np

from exogs.augment import AugmentPlan, allocate, run_plan
from exogs.gscene import AssetLibrary
from exogs.pipeline import load_any_demo
from exogs.synthetic import write_fixture

fx = write_fixture(Path(tempfile.mkdtemp()), H=6, n_gaussians=1000, width=160, height=120)
demo = load_any_demo(fx["manifest"])
lib = AssetLibrary.load(fx["assets"])

# %%
# split mixing spreads strategies over episodes
for row in allocate(8, ["viewpoint", "color", "background", "object"], None):
    print(row)

# %%
plan = AugmentPlan.from_dict({
    "seed": 3, "multiplier": 5,
    "viewpoint": {"max_rot_deg": 10.0, "max_trans_m": 0.1, "look_at_point": [0.5, 0.1, 0.2]},
})
specs = run_plan(demo, lib, plan, fx["root"])
base = demo.cameras[demo.primary_camera].extrinsics
for s in specs:
    shift = np.linalg.norm(s.camera.center - demo.cameras[demo.primary_camera].center)
    print(s.episode_id, "camera moved %.3f m" % shift)

# %%
# same seed, same specs
again = run_plan(demo, lib, plan, fx["root"])
print("reproducible:", all(np.array_equal(a.camera.extrinsics.as_matrix(), b.camera.extrinsics.as_matrix())
                           for a, b in zip(specs, again)))
