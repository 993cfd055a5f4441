# %% [markdown]
# Ingesting raw logs
# ==================
#
# A raw capture is a manifest pointing at joint logs, per-camera object
# tracks and calibrations.  Ingest aligns the tracks to the joint clock and
# fuses the views: rotation from the primary camera, translation averaged
# over every camera that saw the object.

# %%
import tempfile
from pathlib import Path

import numpy as np

from exogs.demo import build_demonstration, load_demo
from exogs.synthetic import write_fixture

root = Path(tempfile.mkdtemp())
fx = write_fixture(root / "fixture", H=10, n_gaussians=1000, width=160, height=120)
raw = load_demo(fx["manifest"])
print("cameras:", list(raw.cameras), "primary:", raw.primary_camera)
print("steps:", raw.H, " cameras:", raw.K)

# %%
demo = build_demonstration(raw)
cube = np.stack([p.translation for p in demo.object_tracks["cube"]])
print("cube path in the robot base frame (m):")
print(np.round(cube, 4))

# %%
# the demonstration file is plain JSON and round-trips exactly
demo.save(root / "demo.json")
from exogs.demo import Demonstration

again = Demonstration.load(root / "demo.json")
print("digest stable:", again.digest() == demo.digest())
