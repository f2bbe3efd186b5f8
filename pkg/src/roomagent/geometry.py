"""Shared small geometry helpers (angles, 2D transforms)."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi]."""
    wrapped = math.remainder(float(theta), 2.0 * math.pi)
    # math.remainder returns values in [-pi, pi]; pin the -pi edge to pi-free form
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a - b, wrapped to [-pi, pi]."""
    return wrap_angle(a - b)


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a CCW rotation by theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def unit(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < eps:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def heading_of(v) -> float:
    """Angle of a 2D vector in world frame, wrapped to [-pi, pi]."""
    return wrap_angle(math.atan2(float(v[1]), float(v[0])))
