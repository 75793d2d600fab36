"""Rigid transforms ``T(s) = alpha * R(angle) * (s - c)`` on ``(row, col)`` points."""

from dataclasses import dataclass

import numpy as np


def rotation(angle):
    ca, sa = np.cos(angle), np.sin(angle)
    return np.array([[ca, -sa], [sa, ca]])


@dataclass(frozen=True)
class RigidTransform:
    """Scale, rotation angle (radians) and translation.

    Maps points of the segmentation frame into a template frame whose origin
    is the template centroid, i.e. ``T(s) = alpha * R(angle) @ (s - c)``.
    """

    alpha: float = 1.0
    angle: float = 0.0
    c: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"scale must be positive, got {self.alpha}")
        object.__setattr__(self, "c", (float(self.c[0]), float(self.c[1])))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "angle", float(self.angle))

    @property
    def R(self):
        return rotation(self.angle)

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return self.alpha * (pts - np.asarray(self.c)) @ self.R.T

    def as_vector(self):
        """Parameters in the order ``[alpha, c_row, c_col, angle]``."""
        return np.array([self.alpha, self.c[0], self.c[1], self.angle])

    @classmethod
    def from_vector(cls, vec):
        return cls(alpha=vec[0], angle=vec[3], c=(vec[1], vec[2]))

    def to_dict(self):
        return {"alpha": self.alpha, "angle": self.angle, "c": list(self.c)}
