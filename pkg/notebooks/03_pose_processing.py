# %% [markdown]
# Object pose processing
# ======================
#
# Tracking jitters while the object is inside the gripper.  Fixing pins it to
# the end effector for the whole grasp; substitution swaps the asset; a seeded
# perturbation moves the whole track rigidly.

# %%
import tempfile
from pathlib import Path

import numpy as np

from exogs.geometry import compose, invert, rotation_angle
from exogs.pipeline import load_any_demo
from exogs.poseproc import detect_grasp_window, fix_object, perturb_poses, substitute_object
from exogs.synthetic import write_fixture

fx = write_fixture(Path(tempfile.mkdtemp()), H=10, n_gaussians=1000, width=160, height=120)
demo = load_any_demo(fx["manifest"])
print("gripper command:", np.round(demo.trajectory.g, 2))

w = detect_grasp_window(demo)
print(f"grasp window: steps {w.start_step}..{w.end_step} (1-based)")

# %%
fixed = fix_object(demo, "cube", w)
rel = [compose(invert(fixed.ee_poses[t]), fixed.object_tracks["cube"][t]) for t in w.steps()]
drift = max(np.abs(r.translation - rel[0].translation).max() for r in rel)
print("relative-pose drift inside the window:", drift)

# %%
mug = substitute_object(fixed, "cube", "mug")
print("cube now rendered as:", mug.object_assets["cube"])

moved = perturb_poses(fixed, "cube", seed=7, max_translation=0.05, max_rotation=np.deg2rad(15))
d = moved.object_tracks["cube"][0].translation - fixed.object_tracks["cube"][0].translation
print("perturbation at step 1: |dt| = %.3f m, rotation %.1f deg" % (
    np.linalg.norm(d), np.rad2deg(rotation_angle(moved.object_tracks["cube"][0], fixed.object_tracks["cube"][0]))))
