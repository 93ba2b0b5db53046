"""Planar poses, rigid transforms, pose noise and BEV grid coordinates.

Grid coordinates are continuous ``(col, row)`` pairs, i.e. the same axis
order as world ``(x, y)``. Cell ``(0, 0)`` has its center at
``(x_min + cell_size / 2, y_min + cell_size / 2)``. Arrays holding grid data
are indexed ``[row, col]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose:
    """6DoF pose; only x, y and yaw are used by the planar pipeline."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw", "pitch", "roll"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def planar(cls, x: float, y: float, yaw: float) -> "Pose":
        return cls(x=x, y=y, yaw=yaw)

    @property
    def is_planar(self) -> bool:
        return self.z == 0.0 and self.pitch == 0.0 and self.roll == 0.0

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.z, self.yaw, self.pitch, self.roll)

    def to_transform(self) -> "RigidTransform2D":
        """Transform from this pose's body frame into the world frame."""
        return RigidTransform2D.from_angle(self.yaw, (self.x, self.y))


@dataclass(frozen=True, eq=False)
class RigidTransform2D:
    """``p -> rotation @ p + translation``.

    The rotation is re-orthonormalized on construction (polar projection),
    so accumulated round-off never drifts off SO(2).
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(2))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(2, 2)
        t = np.asarray(self.translation, dtype=float).reshape(2).copy()
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        det = np.linalg.det(r)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation is not proper (det={det:.6g})")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls()

    @classmethod
    def from_angle(cls, theta: float, translation=(0.0, 0.0)) -> "RigidTransform2D":
        return cls(rotation_matrix(theta), np.asarray(translation, dtype=float))

    @property
    def angle(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rotation
        m[:2, 2] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 2) array or a single 2-vector."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform2D") -> "RigidTransform2D":
        return compose(self, other)

    def __repr__(self):
        tx, ty = self.translation
        return f"RigidTransform2D(angle={math.degrees(self.angle):.6g} deg, t=({tx:.6g}, {ty:.6g}))"


def compose(a: RigidTransform2D, b: RigidTransform2D) -> RigidTransform2D:
    """Transform that applies ``b`` first, then ``a``."""
    return RigidTransform2D(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform2D) -> RigidTransform2D:
    rt = t.rotation.T
    return RigidTransform2D(rt, -rt @ t.translation)


def transform_difference(a: RigidTransform2D, b: RigidTransform2D) -> tuple[float, float]:
    """Translation distance (m) and absolute rotation difference (rad)."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    dr = abs(wrap_angle(a.angle - b.angle))
    return dt, dr


def relative_transform(p_i: Pose, p_j: Pose) -> RigidTransform2D:
    """Map points in agent j's frame into agent i's frame."""
    if not (p_i.is_planar and p_j.is_planar):
        raise ValueError("relative_transform requires planar poses")
    return compose(invert(p_i.to_transform()), p_j.to_transform())


@dataclass(frozen=True)
class PoseNoiseSpec:
    """Gaussian pose noise: ``sigma_t`` meters on x/y, ``sigma_r`` degrees on yaw."""

    sigma_t: float = 0.0
    sigma_r: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("noise standard deviations must be non-negative")


def perturb_pose(p: Pose, spec: PoseNoiseSpec, rng: np.random.Generator) -> Pose:
    """Add independent N(0, sigma_t) to x, y and N(0, sigma_r deg) to yaw.

    Three normals are always drawn, so the generator advances identically
    whatever the sigmas are.
    """
    if not p.is_planar:
        raise ValueError("perturb_pose requires a planar pose")
    dx, dy, dyaw = rng.standard_normal(3)
    return Pose.planar(
        p.x + spec.sigma_t * dx,
        p.y + spec.sigma_t * dy,
        p.yaw + math.radians(spec.sigma_r) * dyaw,
    )


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -100.0
    x_max: float = 100.0
    y_min: float = -40.0
    y_max: float = 40.0
    cell_size: float = 0.625

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid extent must satisfy x_min < x_max and y_min < y_max")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        for name, span in (("W", self.x_max - self.x_min), ("H", self.y_max - self.y_min)):
            n = span / self.cell_size
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise ValueError(f"grid extent is not a whole number of cells along {name} ({n})")

    @property
    def W(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def H(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.H, self.W)

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "cell_size": self.cell_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        unknown = set(d) - {"x_min", "x_max", "y_min", "y_max", "cell_size"}
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def contains(self, points) -> np.ndarray:
        """Whether world points lie inside the grid extent."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (p[:, 0] >= self.x_min) & (p[:, 0] < self.x_max)
            & (p[:, 1] >= self.y_min) & (p[:, 1] < self.y_max)
        )


def world_to_grid(p, g: GridSpec) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    origin = np.array([g.x_min, g.y_min])
    return (p - origin) / g.cell_size - 0.5


def grid_to_world(c, g: GridSpec) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    origin = np.array([g.x_min, g.y_min])
    return (c + 0.5) * g.cell_size + origin
