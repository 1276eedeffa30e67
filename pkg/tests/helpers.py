"""Shared test helpers: deterministic random samplers for geometric objects."""

import numpy as np

from wex.geometry import CameraPose, random_rotation


def random_pose(rng: np.random.Generator, intr, center_scale=2.0):
    return CameraPose(
        rotation=random_rotation(rng),
        center=rng.uniform(-center_scale, center_scale, size=3),
        intrinsics=intr,
    )
