# %% [markdown]
# Rigid transforms and forward kinematics
# =======================================
#
# Poses are unit quaternions (w, x, y, z) plus a translation.  Composition,
# inversion and interpolation never leave SE(3).

# %%
import numpy as np

from exogs.geometry import RigidTransform, compose, invert, pose_interpolate, rotation_angle
from exogs.kinematics import forward_kinematics, gripper_to_width
from exogs.synthetic import arm_model

rng = np.random.default_rng(0)
a = RigidTransform(rng.normal(size=4), rng.normal(size=3))
b = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 3, [0.1, 0.0, 0.2])

# a ∘ a^-1 is the identity up to rounding
e = compose(a, invert(a))
print("identity residual:", np.abs(e.as_matrix() - np.eye(4)).max())

# %%
# slerp in rotation, lerp in translation
for s in (0.0, 0.25, 0.5, 1.0):
    p = pose_interpolate(a, b, s)
    print(f"s={s:.2f}  angle to a={np.rad2deg(rotation_angle(a, p)):7.2f} deg  t={np.round(p.translation, 3)}")

# %% [markdown]
# The fixture arm: 7 revolute joints, a flange and two prismatic fingers
# driven by the normalized gripper command g (0 closed, 1 open).

# %%
model = arm_model()
print(model.n, "actuated joints;", model.L, "links")
q = np.deg2rad([0, 30, 0, -60, 0, 45, 0])
for g in (0.0, 1.0):
    poses = forward_kinematics(model, q, g)
    left = poses[model.link_index("finger_left")].translation
    right = poses[model.link_index("finger_right")].translation
    print(f"g={g}: width {gripper_to_width(model, g):.3f} m, finger distance {np.linalg.norm(left - right):.3f} m")

ee = forward_kinematics(model, q)[model.link_index(model.end_effector_link)]
print("flange position:", np.round(ee.translation, 4))
