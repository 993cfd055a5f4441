# %% [markdown]
# Gaussian scene and rasterizer
# =============================
#
# Assets are 3D Gaussians bound to the environment, a robot link or a tracked
# object.  Each step places them by forward kinematics and the object tracks,
# then the tile rasterizer composites them front to back.

# %%
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from exogs.gscene import AssetLibrary, compose_frame
from exogs.kinematics import forward_kinematics, load_robot
from exogs.pipeline import load_any_demo
from exogs.render import render
from exogs.synthetic import write_fixture

out = Path(tempfile.mkdtemp())
fx = write_fixture(out / "fixture", H=6, n_gaussians=3000, width=320, height=240)
demo = load_any_demo(fx["manifest"])
lib = AssetLibrary.load(fx["assets"])
print({k: len(a) for k, a in lib.assets.items()})

# %%
robot = load_robot(fx["robot"])
state = demo.trajectory.states[0]
poses = dict(zip(robot.link_names, forward_kinematics(robot, state.q, state.g)))
scene = compose_frame(lib, demo, 0, poses, camera=demo.cameras[demo.primary_camera])
res = render(scene)
print("rgb", res.rgb.shape, "labels present:", np.unique(res.instance))
print("alpha + T - 1 max:", np.abs(res.alpha + res.transmittance - 1).max())

# %%
# instance ids: 0 background, 1 robot, 2 object, 255 empty
palette = np.array([[90, 90, 90], [220, 60, 60], [60, 200, 60]] + [[0, 0, 0]] * 253, dtype=np.uint8)
Image.fromarray((np.clip(res.rgb, 0, 1) * 255).astype(np.uint8)).save(out / "rgb.png")
Image.fromarray(palette[res.instance]).save(out / "instance.png")
print("written to", out)
