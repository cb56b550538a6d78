"""Binocular vergence geometry.

Head-fixed right-handed frame throughout: x points right, y up, z forward
along the optical axis. Positions are meters, angles are degrees at the API
boundary (radians internally). All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DegenerateInputError, DomainError

__all__ = [
    "Vec3",
    "GazeRay",
    "EyeConfig",
    "TargetSpec",
    "vergence_angle",
    "ideal_vergence",
    "to_diopters",
    "forward_gaze",
    "gva_velocity",
]

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Vec3:
    """3-component vector: direction components or a position in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for c in (self.x, self.y, self.z):
            if not math.isfinite(c):
                raise DegenerateInputError(f"non-finite vector component: {self!r}")

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise DegenerateInputError("cannot normalize a zero-norm vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class GazeRay:
    """An eye's gaze ray: origin in meters, unit direction after construction."""

    origin: Vec3
    direction: Vec3

    def __post_init__(self):
        d = self.direction.normalized()
        object.__setattr__(self, "direction", d)
        assert abs(d.norm() - 1.0) < _NORM_TOL


@dataclass(frozen=True)
class EyeConfig:
    """Eye-center placement; defaults to eyes on the x axis around the origin."""

    ipd: float
    left_center: Vec3 = field(default=None)  # type: ignore[assignment]
    right_center: Vec3 = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (self.ipd > 0.0) or not math.isfinite(self.ipd):
            raise DomainError(f"ipd must be positive and finite, got {self.ipd}")
        if self.left_center is None:
            object.__setattr__(self, "left_center", Vec3(-self.ipd / 2.0, 0.0, 0.0))
        if self.right_center is None:
            object.__setattr__(self, "right_center", Vec3(self.ipd / 2.0, 0.0, 0.0))
        sep = (self.left_center - self.right_center).norm()
        if abs(sep - self.ipd) > _NORM_TOL:
            raise DomainError(
                f"eye centers are {sep} m apart but ipd is {self.ipd} m"
            )

    @property
    def cyclopean(self) -> Vec3:
        return (self.left_center + self.right_center).scaled(0.5)


@dataclass(frozen=True)
class TargetSpec:
    """A fixation target: position plus its nominal depth in meters and diopters."""

    position: Vec3
    depth_m: float
    depth_d: float

    def __post_init__(self):
        if not (self.depth_m > 0.0):
            raise DomainError(f"depth_m must be positive, got {self.depth_m}")
        if abs(self.depth_d - 1.0 / self.depth_m) > _NORM_TOL:
            raise DomainError(
                f"depth_d={self.depth_d} inconsistent with 1/depth_m={1.0 / self.depth_m}"
            )

    @classmethod
    def midline(cls, depth_m: float) -> "TargetSpec":
        """Target straight ahead on the optical axis at the given depth."""
        if not (depth_m > 0.0):
            raise DomainError(f"depth_m must be positive, got {depth_m}")
        return cls(Vec3(0.0, 0.0, depth_m), depth_m, 1.0 / depth_m)

    @classmethod
    def at_azimuth(cls, depth_m: float, azimuth_deg: float) -> "TargetSpec":
        """Target at the given eye-to-target distance, rotated right by azimuth."""
        if not (depth_m > 0.0):
            raise DomainError(f"depth_m must be positive, got {depth_m}")
        a = math.radians(azimuth_deg)
        pos = Vec3(depth_m * math.sin(a), 0.0, depth_m * math.cos(a))
        return cls(pos, depth_m, 1.0 / depth_m)


def vergence_angle(left_dir: Vec3, right_dir: Vec3, *, project_horizontal: bool = False) -> float:
    """Angle in degrees between the two eyes' gaze direction vectors.

    Computed as the arccosine of the normalized dot product of the full 3D
    vectors. ``project_horizontal=True`` zeroes the vertical components first,
    measuring the angle in the horizontal plane only. Result is in [0, 180],
    symmetric in its arguments, and invariant to positive rescaling of either
    vector.
    """
    if project_horizontal:
        left_dir = Vec3(left_dir.x, 0.0, left_dir.z)
        right_dir = Vec3(right_dir.x, 0.0, right_dir.z)
    nl, nr = left_dir.norm(), right_dir.norm()
    if nl == 0.0 or nr == 0.0:
        raise DegenerateInputError("vergence_angle requires nonzero gaze vectors")
    c = left_dir.dot(right_dir) / (nl * nr)
    c = max(-1.0, min(1.0, c))
    return math.degrees(math.acos(c))


def ideal_vergence(depth_m: float, ipd: float) -> float:
    """Vergence angle in degrees for a midline target at ``depth_m`` meters.

    Isoceles geometry: the two visual axes meet at the target, so the full
    angle is 2*atan(ipd / (2*depth)). Strictly decreasing in depth and
    approaching zero at infinity.
    """
    if not (depth_m > 0.0) or not math.isfinite(depth_m):
        raise DomainError(f"depth_m must be positive and finite, got {depth_m}")
    if not (ipd > 0.0) or not math.isfinite(ipd):
        raise DomainError(f"ipd must be positive and finite, got {ipd}")
    return math.degrees(2.0 * math.atan(ipd / (2.0 * depth_m)))


def to_diopters(depth_m: float) -> float:
    """Convert a depth in meters to diopters (1/m). Its own inverse."""
    if not (depth_m > 0.0) or not math.isfinite(depth_m):
        raise DomainError(f"depth_m must be positive and finite, got {depth_m}")
    return 1.0 / depth_m


def _rotate_y(v: Vec3, angle_rad: float) -> Vec3:
    # Positive angle turns the forward (+z) axis toward +x, i.e. rightward.
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return Vec3(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)


def forward_gaze(target: TargetSpec, eyes: EyeConfig, head_yaw: float = 0.0) -> tuple[GazeRay, GazeRay]:
    """Ideal gaze rays for both eyes fixating ``target``.

    The head (and with it both eye centers) is rotated by ``head_yaw`` degrees
    about the vertical axis through the cyclopean point; each returned ray
    then points from the rotated eye center to the target. For a midline
    target with the head facing it, the vergence angle of the pair equals
    ``ideal_vergence`` exactly.
    """
    yaw = math.radians(head_yaw)
    cyc = eyes.cyclopean
    rays = []
    for center in (eyes.left_center, eyes.right_center):
        rotated = _rotate_y(center - cyc, yaw) + cyc
        to_target = target.position - rotated
        if to_target.norm() == 0.0:
            raise DegenerateInputError("target coincides with an eye center")
        rays.append(GazeRay(rotated, to_target))
    return rays[0], rays[1]


def gva_velocity(series: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Forward-difference velocity of a vergence-angle time series.

    ``series`` is (t_s, gva_deg) pairs with strictly increasing timestamps;
    NaN angles mark gaps. Each output entry is timestamped at the later sample
    of an adjacent valid pair, so no velocity is reported at a gap or across
    one. Fewer than two adjacent valid samples yields an empty list.
    """
    pts: Sequence[tuple[float, float]] = list(series)
    last_t = None
    for t, _ in pts:
        if last_t is not None and not (t > last_t):
            raise DomainError(f"timestamps must be strictly increasing (t={t})")
        last_t = t
    out: list[tuple[float, float]] = []
    for i in range(1, len(pts)):
        t0, g0 = pts[i - 1]
        t1, g1 = pts[i]
        if math.isnan(g0) or math.isnan(g1):
            continue
        out.append((t1, (g1 - g0) / (t1 - t0)))
    return out
