"""Desk-scale humanoid agent stack: scenes, tasks, instruction compiling,
repulsion-aware navigation, a latent-diffusion motion executor, IK refinement,
a kinematic surrogate environment, and task evaluation."""

__version__ = "0.1.0"
