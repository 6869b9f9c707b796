"""Camera/stereo geometry and the image motion-flow model.

Coordinate conventions used everywhere in this package:
  * camera/body frame: x right, y down, z forward (optical axis);
  * world frame: z up, gravity is (0, 0, -9.81) m/s^2;
  * the left camera frame coincides with the body (IMU) frame;
  * pixel coordinates are 0-based, x along columns, y along rows.

The image velocity of a static 3D point seen at pixel x with depth Z, for a
camera moving with body-frame linear velocity v and angular velocity w, is

    flow = A(x) @ v / Z + B(x) @ w

with A, B the 2x3 matrices returned by :func:`flow_matrices`.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Rectified pinhole model with a single focal length."""

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def contains(self, x, y):
        return 0 <= x < self.width and 0 <= y < self.height

    def project(self, p_cam):
        """Pixel coordinates of a camera-frame point; Z must be positive."""
        p = np.asarray(p_cam, dtype=float)
        if p[2] <= 0:
            raise ValueError("point is not in front of the camera")
        return np.array([self.f * p[0] / p[2] + self.cx,
                         self.f * p[1] / p[2] + self.cy])


@dataclass
class StereoRig:
    """Rectified horizontal stereo pair; left camera = body frame."""

    left: CameraIntrinsics
    right: CameraIntrinsics
    baseline: float
    t_body_leftcam: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if (self.left.width, self.left.height) != (self.right.width, self.right.height):
            raise ValueError("left and right cameras must share resolution")


@dataclass
class BodyKinematics:
    """Instantaneous body-frame linear and angular velocity."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.omega))):
            raise ValueError("kinematics must be finite")


def flow_matrices(intr: CameraIntrinsics, px):
    """Geometry matrices (A, B) of the motion-flow model at a pixel.

    A scales the translational term (divide by depth), B the rotational one.
    Both depend only on the pixel position and the intrinsics.
    """
    x, y = float(px[0]), float(px[1])
    if not intr.contains(x, y):
        raise ValueError(f"pixel ({x}, {y}) outside image bounds")
    f = intr.f
    xr = x - intr.cx
    yr = y - intr.cy
    a = np.array([[-f, 0.0, xr],
                  [0.0, -f, yr]])
    b = np.array([[xr * yr / f, -(f + xr * xr / f), yr],
                  [f + yr * yr / f, -xr * yr / f, -xr]])
    return a, b


def motion_flow(intr: CameraIntrinsics, px, kin: BodyKinematics, depth: float):
    """Full image velocity (px/s) at a pixel for given kinematics and depth."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    a, b = flow_matrices(intr, px)
    return a @ kin.v / depth + b @ kin.omega
