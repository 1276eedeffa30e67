"""wex: text-prompted room generation as a navigable Gaussian-splat scene.

Three stages: a panoramic image scaffold anchored at the origin, iterative
video trajectories that expand coverage away from it, and a differentiable
splat reconstruction over everything generated.
"""

__version__ = "0.1.0"
