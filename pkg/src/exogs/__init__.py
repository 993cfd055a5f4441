"""Real-to-sim data engine: replay exoskeleton demonstrations through
Gaussian-splat scenes, augment them, and export labelled training episodes."""

from .geometry import CameraModel, RigidTransform, compose, invert, pose_interpolate, project, unproject
from .kinematics import RobotModel, Trajectory, forward_kinematics, load_robot, parse_robot
from .demo import Demonstration, align_time, build_demonstration, fuse_views, load_demo
from .poseproc import detect_grasp_window, fix_object, perturb_poses, substitute_object
from .gscene import AssetLibrary, GaussianAsset, compose_frame, load_splat, save_splat
from .render import RenderConfig, RenderOutput, project_gaussians, rasterize, render
from .augment import AugmentPlan, run_plan
from .semantics import RelationSet, aggregate_patch_labels, build_attention_mask, export_episode, load_episode
from .pipeline import PipelineConfig, cmd_augment, cmd_replay, cmd_validate

__version__ = "0.1.0"
