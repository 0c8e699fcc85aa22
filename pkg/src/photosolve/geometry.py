"""Camera model, SE(3) pose handling, projection geometry and rigid flow.

All differentiable operations work on float64 torch tensors so that analytic
adjoints can be validated against finite differences at tight tolerances.
Pixel centers sit at integer coordinates and the homogeneous lift of a pixel
is h(p) = (u, v, 1). Euler angles follow the intrinsic X-then-Y-then-Z
convention, fixed project-wide. Depth is in millimeters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import torch
from torch import Tensor

DTYPE = torch.float64


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def scaled(self, level: int) -> "Intrinsics":
        """Intrinsics for pyramid level `level`; each level halves both dims.

        The half-pixel shift keeps pixel centers aligned under 2x2 pooling.
        """
        s = 2**level
        return Intrinsics(
            fx=self.fx / s,
            fy=self.fy / s,
            cx=(self.cx + 0.5) / s - 0.5,
            cy=(self.cy + 0.5) / s - 0.5,
            width=self.width // s,
            height=self.height // s,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def rotation_from_euler(euler: Tensor) -> Tensor:
    """3x3 rotation matrix for intrinsic XYZ Euler angles (radians).

    Differentiable; composes Rx(a) @ Ry(b) @ Rz(c).
    """
    euler = torch.as_tensor(euler, dtype=DTYPE)
    ca, sa = torch.cos(euler[0]), torch.sin(euler[0])
    cb, sb = torch.cos(euler[1]), torch.sin(euler[1])
    cc, sc = torch.cos(euler[2]), torch.sin(euler[2])
    one = torch.ones_like(ca)
    zero = torch.zeros_like(ca)
    rx = torch.stack([one, zero, zero, zero, ca, -sa, zero, sa, ca]).reshape(3, 3)
    ry = torch.stack([cb, zero, sb, zero, one, zero, -sb, zero, cb]).reshape(3, 3)
    rz = torch.stack([cc, -sc, zero, sc, cc, zero, zero, zero, one]).reshape(3, 3)
    return rx @ ry @ rz


def euler_from_rotation(matrix: np.ndarray) -> np.ndarray:
    """Recover intrinsic XYZ Euler angles from a rotation matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    sy = float(np.clip(m[0, 2], -1.0, 1.0))
    b = math.asin(sy)
    if abs(sy) < 1.0 - 1e-12:
        a = math.atan2(-m[1, 2], m[2, 2])
        c = math.atan2(-m[0, 1], m[0, 0])
    else:
        # Gimbal lock: only a +/- c observable; put everything in a.
        c = 0.0
        a = math.atan2(-m[1, 0], m[1, 1]) if sy < 0 else math.atan2(m[1, 0], m[1, 1])
    return np.array([a, b, c])


@dataclass
class PoseSE3:
    """Relative camera motion as intrinsic XYZ Euler angles plus translation.

    Angles in radians, translation in millimeters. The pose maps points of
    the reference frame into the other frame: p' = R p + t.
    """

    euler: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.euler = np.asarray(self.euler, dtype=np.float64).reshape(3).copy()
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not (np.isfinite(self.euler).all() and np.isfinite(self.translation).all()):
            raise ValueError("pose parameters must be finite")

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_params(cls, params) -> "PoseSE3":
        p = np.asarray(params, dtype=np.float64).reshape(6)
        return cls(p[:3], p[3:])

    def params(self) -> np.ndarray:
        """6-vector [euler, translation]."""
        return np.concatenate([self.euler, self.translation])

    def rotation(self) -> np.ndarray:
        return rotation_from_euler(torch.from_numpy(self.euler)).numpy()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, matrix) -> "PoseSE3":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(euler_from_rotation(m[:3, :3]), m[:3, 3])

    def inverse(self) -> "PoseSE3":
        r = self.rotation()
        return PoseSE3(euler_from_rotation(r.T), -r.T @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Pose applying `other` first, then `self`."""
        return PoseSE3.from_matrix(self.matrix() @ other.matrix())


PoseLike = Union[PoseSE3, Tensor]


def _pose_tensor(pose: PoseLike) -> Tensor:
    """6-vector pose tensor [euler, translation]; passes tensors through."""
    if isinstance(pose, PoseSE3):
        return torch.from_numpy(pose.params())
    t = torch.as_tensor(pose, dtype=DTYPE)
    if t.shape != (6,):
        raise ValueError(f"pose tensor must have shape (6,), got {tuple(t.shape)}")
    return t


@dataclass
class PointCloud:
    """Per-pixel 3D points (mm, camera frame) with validity flags."""

    points: Tensor  # (H, W, 3)
    valid: Tensor  # (H, W) bool


class Projection(NamedTuple):
    """Per-pixel projected coordinates with validity and in-view flags."""

    coords: Tensor  # (H, W, 2) target (u, v); garbage where invalid
    valid: Tensor  # (H, W) bool, z > 0
    in_view: Tensor  # (H, W) bool, valid and inside [0,W-1]x[0,H-1]


def pixel_grid(height: int, width: int) -> Tensor:
    """(H, W, 2) grid of pixel-center coordinates (u, v)."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE),
        torch.arange(width, dtype=DTYPE),
        indexing="ij",
    )
    return torch.stack([u, v], dim=-1)


def backproject(depth: Tensor, intr: Intrinsics) -> PointCloud:
    """Lift each pixel to a 3D point: depth(p) * K^-1 h(p).

    Pixels with non-positive or non-finite depth are flagged invalid.
    """
    if depth.shape != (intr.height, intr.width):
        raise ValueError(
            f"depth shape {tuple(depth.shape)} does not match intrinsics "
            f"{intr.height}x{intr.width}"
        )
    grid = pixel_grid(intr.height, intr.width)
    x = (grid[..., 0] - intr.cx) / intr.fx * depth
    y = (grid[..., 1] - intr.cy) / intr.fy * depth
    valid = (depth > 0) & torch.isfinite(depth)
    return PointCloud(points=torch.stack([x, y, depth], dim=-1), valid=valid)


def transform_points(cloud: PointCloud, pose: PoseLike) -> PointCloud:
    """Apply p' = R p + t per point; points ending at z' <= 0 become invalid."""
    p = _pose_tensor(pose)
    r = rotation_from_euler(p[:3])
    moved = cloud.points @ r.T + p[3:]
    return PointCloud(points=moved, valid=cloud.valid & (moved[..., 2] > 0))


def project(cloud: PointCloud, intr: Intrinsics) -> Projection:
    """Pinhole projection u = fx x/z + cx, v = fy y/z + cy.

    Points with z <= 0 are invalid; points landing outside the image
    keep their coordinates but are flagged not in view.
    """
    z = cloud.points[..., 2]
    valid = cloud.valid & (z > 0)
    z_safe = torch.where(valid, z, torch.ones_like(z))
    u = intr.fx * cloud.points[..., 0] / z_safe + intr.cx
    v = intr.fy * cloud.points[..., 1] / z_safe + intr.cy
    in_view = valid & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    return Projection(coords=torch.stack([u, v], dim=-1), valid=valid, in_view=in_view)


def rigid_flow(depth: Tensor, pose: PoseLike, intr: Intrinsics) -> tuple[Tensor, Tensor]:
    """2D displacement induced by depth and camera motion.

    flow(p) = project(R * backproject(p) + t) - p. Returns (flow, valid);
    invalid pixels (bad depth or z' <= 0) carry unusable flow values.

    The subtraction is evaluated as fx * (x' - r_u * z') / z' with r_u the
    ray slope of the pixel, which cancels bitwise for identity motion; the
    naive projected-minus-grid form leaves ~1e-15 noise there.
    """
    if depth.shape != (intr.height, intr.width):
        raise ValueError(
            f"depth shape {tuple(depth.shape)} does not match intrinsics "
            f"{intr.height}x{intr.width}"
        )
    p = _pose_tensor(pose)
    r = rotation_from_euler(p[:3])
    grid = pixel_grid(intr.height, intr.width)
    ru = (grid[..., 0] - intr.cx) / intr.fx
    rv = (grid[..., 1] - intr.cy) / intr.fy
    points = torch.stack([ru * depth, rv * depth, depth], dim=-1)
    moved = points @ r.T + p[3:]
    zp = moved[..., 2]
    valid = (depth > 0) & torch.isfinite(depth) & (zp > 0)
    z_safe = torch.where(valid, zp, torch.ones_like(zp))
    fu = intr.fx * (moved[..., 0] - ru * zp) / z_safe
    fv = intr.fy * (moved[..., 1] - rv * zp) / z_safe
    return torch.stack([fu, fv], dim=-1), valid
