import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from exogs.geometry import CameraModel, RigidTransform, look_at  # noqa: E402
from exogs.gscene import FrameScene, Placement, make_asset  # noqa: E402
from exogs.synthetic import write_fixture  # noqa: E402


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """A complete on-disk demo (10 steps, ~5k Gaussians, 320x240 cameras)."""
    return write_fixture(tmp_path_factory.mktemp("fixture"))


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """Same layout, scaled down so pipeline tests run in seconds."""
    return write_fixture(tmp_path_factory.mktemp("small"), H=4, n_gaussians=600, width=64, height=48)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q


def random_transform(rng, scale=1.0):
    return RigidTransform(random_rotation(rng), rng.normal(size=3) * scale)


def random_scene(rng, n=None, width=None, height=None):
    """Random splats in front of a random pinhole camera."""
    n = int(rng.integers(1, 65)) if n is None else n
    width = int(rng.integers(8, 33)) if width is None else width
    height = int(rng.integers(8, 33)) if height is None else height
    f = rng.uniform(0.8, 1.5) * width
    eye = rng.normal(size=3) * 0.2 + np.array([0.0, 0.0, -2.0])
    cam = CameraModel(f, f * rng.uniform(0.9, 1.1), (width - 1) / 2 + rng.normal(), (height - 1) / 2 + rng.normal(),
                      width, height, look_at(eye, rng.normal(size=3) * 0.1, up=(0, 1, 0)))
    placements = []
    k = 0
    for label in (0, 1, 2):
        m = n // 3 + (1 if label < n % 3 else 0)
        if m == 0:
            continue
        q = rng.normal(size=(m, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        a = make_asset(
            rng.normal(size=(m, 3)) * 0.4, rng.uniform(0.02, 0.25, size=(m, 3)),
            rng.uniform(0, 1, size=(m, 3)), rng.uniform(0.05, 1.0, size=m), q, label, f"a{label}",
        )
        placements.append(Placement(f"a{label}", a, RigidTransform()))
        k += m
    return FrameScene(tuple(placements), cam)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
