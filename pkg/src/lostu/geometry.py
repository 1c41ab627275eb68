"""Pinhole camera data model, projection and pose-noise sampling.

Conventions
-----------
* ``rotation`` maps world vectors into the camera frame, so a world point
  ``X`` has camera coordinates ``rotation @ (X - center)``.
* Pixels are homogeneous 3-vectors whose last entry is exactly 1.
* Rotation noise is an angle-vector ``phi`` applied on the left through the
  exponential map, ``exp([phi x]) @ rotation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import CheiralityError

# Upper-triangular entries of K that may carry uncertainty, in storage order.
INTRINSIC_ENTRIES = {
    "fx": (0, 0),
    "skew": (0, 1),
    "cx": (0, 2),
    "fy": (1, 1),
    "cy": (1, 2),
}
INTRINSIC_ORDER = ("fx", "skew", "cx", "fy", "cy")

_PSD_TOL = 1e-12


def skew(v):
    """Cross-product matrix ``[v x]`` so that ``skew(a) @ b == cross(a, b)``."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def exp_so3(phi):
    """Rotation matrix ``exp([phi x])`` for an angle-vector ``phi``."""
    return Rotation.from_rotvec(np.asarray(phi, dtype=float)).as_matrix()


def _frozen(a, shape, name):
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _check_psd(m, name):
    if not np.allclose(m, m.T, rtol=0.0, atol=_PSD_TOL * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if m.any():
        lo = np.linalg.eigvalsh(m).min()
        if lo < -_PSD_TOL * max(1.0, np.abs(m).max()):
            raise ValueError(f"{name} must be positive semi-definite (min eigenvalue {lo:g})")


def psd_sqrt(m):
    """Return ``L`` with ``L @ L.T == m`` for a symmetric PSD matrix ``m``."""
    w, v = np.linalg.eigh(m)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float = 0.0
    cy: float = 0.0
    skew: float = 0.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "skew"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self):
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse(self):
        """Closed-form inverse of the calibration matrix."""
        fx, fy, s, cx, cy = self.fx, self.fy, self.skew, self.cx, self.cy
        return np.array([[1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
                         [0.0, 1.0 / fy, -cy / fy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    center: np.ndarray
    # w-first quaternion the rotation was built from, kept for lossless writing
    quaternion: Optional[Tuple[float, float, float, float]] = field(default=None, compare=False,
                                                                    repr=False)

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3), "rotation")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-10):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", _frozen(self.center, (3,), "center"))

    @classmethod
    def look_at(cls, center, target, up=(0.0, 1.0, 0.0)):
        """Pose at ``center`` whose optical axis points at ``target``.

        The camera x-axis is ``up x z`` so the roll is zero; ``up`` is swapped
        for the world x-axis if it is parallel to the viewing direction.
        """
        return cls(look_at_rotation(center, target, up), center)

    @classmethod
    def from_quaternion(cls, q, center, tol=1e-6):
        """Pose from a w-first unit quaternion of the world-to-camera rotation."""
        q = tuple(float(x) for x in q)
        if len(q) != 4 or not all(np.isfinite(q)):
            raise ValueError("quaternion must hold four finite numbers")
        if abs(np.linalg.norm(q) - 1.0) > tol:
            raise ValueError(f"quaternion norm {np.linalg.norm(q):.9g} is not 1")
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        return cls(R, center, quaternion=q)

    def as_quaternion(self):
        """w-first quaternion with ``w >= 0`` (or the one this pose was built from)."""
        if self.quaternion is not None:
            return self.quaternion
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = (w, x, y, z) if w >= 0 else (-w, -x, -y, -z)
        return tuple(float(v) for v in q)


def look_at_rotation(center, target, up=(0.0, 1.0, 0.0)):
    z = np.asarray(target, dtype=float) - np.asarray(center, dtype=float)
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross([1.0, 0.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


@dataclass(frozen=True)
class PoseUncertainty:
    rot_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    center_cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        for name in ("rot_cov", "center_cov"):
            m = _frozen(getattr(self, name), (3, 3), name)
            _check_psd(m, name)
            object.__setattr__(self, name, m)

    @classmethod
    def isotropic(cls, sigma_phi=0.0, sigma_c=0.0):
        """Uncertainty with ``sigma_phi**2 * I`` (rad^2) and ``sigma_c**2 * I``."""
        return cls(sigma_phi ** 2 * np.eye(3), sigma_c ** 2 * np.eye(3))

    def is_zero(self):
        return not (self.rot_cov.any() or self.center_cov.any())


@dataclass(frozen=True)
class Observation:
    pixel: np.ndarray
    cov2d: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        p = np.array(self.pixel, dtype=float)
        if p.shape == (2,):
            p = np.append(p, 1.0)
        p = _frozen(p, (3,), "pixel")
        if p[2] != 1.0:
            raise ValueError("homogeneous pixel must have third entry 1")
        c = _frozen(self.cov2d, (2, 2), "cov2d")
        _check_psd(c, "cov2d")
        object.__setattr__(self, "pixel", p)
        object.__setattr__(self, "cov2d", c)

    @classmethod
    def isotropic(cls, xy, sigma_px):
        return cls(np.asarray(xy, dtype=float)[:2], sigma_px ** 2 * np.eye(2))

    def with_cov(self, cov2d):
        return Observation(self.pixel, cov2d)


@dataclass(frozen=True)
class View:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    uncertainty: PoseUncertainty = field(default_factory=PoseUncertainty)
    intrinsics_var: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.intrinsics_var is not None:
            var = dict(self.intrinsics_var)
            for k, v in var.items():
                if k not in INTRINSIC_ENTRIES:
                    raise ValueError(f"unknown intrinsic entry {k!r}")
                if not v >= 0:
                    raise ValueError(f"variance of {k} must be non-negative")
            object.__setattr__(self, "intrinsics_var", var)

    @property
    def rotation(self):
        return self.pose.rotation

    @property
    def center(self):
        return self.pose.center

    def intrinsics_variances(self):
        """Variances of (fx, skew, cx, fy, cy) as a 5-vector."""
        var = self.intrinsics_var or {}
        return np.array([float(var.get(k, 0.0)) for k in INTRINSIC_ORDER])

    def replace(self, **changes):
        kw = dict(intrinsics=self.intrinsics, pose=self.pose,
                  uncertainty=self.uncertainty, intrinsics_var=self.intrinsics_var)
        kw.update(changes)
        return View(**kw)


@dataclass(frozen=True)
class Track:
    point_id: int
    entries: Tuple[Tuple[int, Observation], ...]

    def __post_init__(self):
        entries = tuple((int(j), obs) for j, obs in self.entries)
        if len(entries) < 1:
            raise ValueError("a track needs at least one observation")
        ids = [j for j, _ in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"track {self.point_id} repeats a view id")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    @property
    def view_ids(self):
        return [j for j, _ in self.entries]


@dataclass(frozen=True)
class Scene:
    views: Tuple[View, ...]
    tracks: Tuple[Track, ...] = ()
    points: Optional[Tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.points is not None:
            object.__setattr__(self, "points",
                               tuple(_frozen(p, (3,), "point") for p in self.points))
        n = len(self.views)
        for t in self.tracks:
            for j in t.view_ids:
                if not 0 <= j < n:
                    raise ValueError(f"track {t.point_id} references missing view {j}")

    def track_views(self, track):
        return [self.views[j] for j in track.view_ids]


def project(X, view: View) -> Observation:
    """Pinhole projection of world point ``X`` into ``view``.

    Raises
    ------
    CheiralityError
        If the point is not strictly in front of the camera.
    """
    p = view.rotation @ (np.asarray(X, dtype=float) - view.center)
    if not p[2] > 0:
        raise CheiralityError(f"point depth {p[2]:g} is not positive")
    x = view.intrinsics.matrix @ p
    x = x / x[2]
    x[2] = 1.0
    return Observation(x)


def los_direction(obs: Observation, view: View):
    """Unit line of sight ``K^-1 x / |K^-1 x|`` in the camera frame."""
    v = view.intrinsics.inverse @ obs.pixel
    return v / np.linalg.norm(v)


def perturb_poses(rotations, centers, rot_covs, center_covs, normals):
    """Apply sampled pose noise to a batch of poses.

    ``normals`` holds six standard normal draws per pose; the first three
    feed the rotation perturbation and the last three the center. Arrays
    carry a leading batch shape ``(..., 3, 3)`` / ``(..., 3)``.
    """
    rotations = np.asarray(rotations, dtype=float)
    shape = rotations.shape[:-2]
    z = np.asarray(normals, dtype=float).reshape(shape + (6,))
    w, v = np.linalg.eigh(rot_covs)
    dphi = np.einsum("...ij,...j->...i", v * np.sqrt(np.clip(w, 0.0, None))[..., None, :], z[..., :3])
    w, v = np.linalg.eigh(center_covs)
    dc = np.einsum("...ij,...j->...i", v * np.sqrt(np.clip(w, 0.0, None))[..., None, :], z[..., 3:])
    dR = Rotation.from_rotvec(dphi.reshape(-1, 3)).as_matrix().reshape(shape + (3, 3))
    return dR @ rotations, centers + dc


def sample_noisy_view(view: View, rng_seed: Union[int, np.random.Generator]) -> View:
    """Draw a pose consistent with ``view.uncertainty``.

    The center moves by a draw from ``center_cov`` and the rotation is
    left-multiplied by ``exp([dphi x])`` with ``dphi`` drawn from ``rot_cov``.
    The returned view keeps the same uncertainty so it can be fed to the
    uncertainty-aware solvers directly.
    """
    if view.uncertainty.is_zero():
        return view
    rng = np.random.default_rng(rng_seed)
    R, c = perturb_poses(view.rotation, view.center, view.uncertainty.rot_cov,
                         view.uncertainty.center_cov, rng.standard_normal(6))
    # Re-orthonormalize to wash out the rounding of the composed product.
    u, _, vt = np.linalg.svd(R)
    return view.replace(pose=CameraPose(u @ vt, c))


def views_to_arrays(views: Sequence[View]):
    """Stack per-view camera parameters into the arrays the kernels consume."""
    Kinv = np.stack([v.intrinsics.inverse for v in views])
    R = np.stack([v.rotation for v in views])
    c = np.stack([v.center for v in views])
    return Kinv, R, c
