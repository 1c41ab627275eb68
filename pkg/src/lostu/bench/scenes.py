"""Synthetic scene generation for the two-view and n-view studies.

Each trial draws from its own generator seeded by ``(seed, trial_index)`` so
any subset of trials can be regenerated independently, in any order and in
any process. Generated batches follow the kernel array layout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import PoseUncertainty, look_at_rotation, perturb_poses

DEG = np.pi / 180.0


@dataclass(frozen=True)
class TwoViewConfig:
    """Two cameras at ``[0, y1, z1]`` and ``[0, 2, -2]`` looking at the origin."""

    y1: float = -2.0
    z1: float = -6.0
    focal: float = 400.0
    sigma_px: float = 1.0
    sigma_phi: float = 0.5  # degrees
    sigma_c: float = 0.03
    pose_scale: float = 1.0
    trials: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for name in ("sigma_px", "sigma_phi", "sigma_c", "pose_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.focal <= 0:
            raise ValueError("focal must be positive")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class NViewConfig:
    """Cameras spawned in a box, looking down +z at a single point."""

    point: Tuple[float, float, float] = (2.0, 1.0, 0.0)
    m: int = 50
    box: Tuple[Tuple[float, float], ...] = ((-10.0, 10.0), (-10.0, 10.0), (-50.0, -10.0))
    pointing_jitter: float = 2.0  # degrees
    focal: float = 800.0
    sigma_px: float = 1.0
    sigma_phi: float = 0.05  # degrees
    sigma_c: float = 0.02
    scale_range: Tuple[float, float] = (0.5, 2.0)
    depth_scale: float = 1.0
    trials: int = 5000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "point", tuple(float(x) for x in self.point))
        object.__setattr__(self, "box", tuple(tuple(float(x) for x in b) for b in self.box))
        object.__setattr__(self, "scale_range", tuple(float(x) for x in self.scale_range))
        if self.m < 2:
            raise ValueError("need at least two views")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if len(self.box) != 3 or any(lo >= hi for lo, hi in self.box):
            raise ValueError("box must hold three non-empty [lo, hi] intervals")
        for name in ("sigma_px", "sigma_phi", "sigma_c", "pointing_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class TrialBatch:
    """Arrays for ``T`` trials of ``n`` views, in the kernel layout."""

    X: np.ndarray           # (T, 3) ground truth
    Kinv: np.ndarray        # (T, n, 3, 3)
    R: np.ndarray           # (T, n, 3, 3) estimator's (noisy) rotations
    c: np.ndarray           # (T, n, 3) estimator's (noisy) centers
    px: np.ndarray          # (T, n, 2) noisy pixels
    sigma: np.ndarray       # (T, n) pixel standard deviation
    cov2d: np.ndarray       # (T, n, 2, 2)
    rot_cov: np.ndarray     # (T, n, 3, 3) declared rotation covariance
    center_cov: np.ndarray  # (T, n, 3, 3) declared center covariance
    kvar: np.ndarray        # (T, n, 5)
    corrupt_rot_cov: np.ndarray = field(default=None)
    corrupt_center_cov: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.X)

    @property
    def views(self):
        return self.px.shape[1]

    def subset(self, idx):
        return TrialBatch(**{f.name: (None if getattr(self, f.name) is None
                                      else np.ascontiguousarray(getattr(self, f.name)[idx]))
                             for f in dataclasses.fields(self)})


def trial_rng(seed, trial):
    return np.random.default_rng([int(seed), int(trial)])


def corrupt_covariances(uncertainty: PoseUncertainty, rng, low=0.5, high=2.0) -> PoseUncertainty:
    """Scale the rotation and center covariances by independent uniform factors in [low, high]."""
    rng = np.random.default_rng(rng)
    f = rng.uniform(low, high, size=2)
    return PoseUncertainty(uncertainty.rot_cov * f[0], uncertainty.center_cov * f[1])


def _project(R, c, X, focal):
    p = np.einsum("tnij,tnj->tni", R, X[:, None, :] - c)
    return focal * p[..., :2] / p[..., 2:]


def _finish(X, R_true, c_true, focal, sig_px, sig_phi, sig_c, z_px, z_pose):
    """Noisy pixels from the true poses, noisy poses for the estimator."""
    T, n = c_true.shape[:2]
    px = _project(R_true, c_true, X, focal) + sig_px[..., None] * z_px
    rot_cov = (sig_phi ** 2)[..., None, None] * np.eye(3)
    center_cov = (sig_c ** 2)[..., None, None] * np.eye(3)
    R, c = perturb_poses(R_true, c_true, rot_cov, center_cov, z_pose)
    Kinv = np.broadcast_to(np.diag([1.0 / focal, 1.0 / focal, 1.0]), (T, n, 3, 3)).copy()
    cov2d = (sig_px ** 2)[..., None, None] * np.eye(2)
    return TrialBatch(X=X, Kinv=Kinv, R=np.ascontiguousarray(R), c=np.ascontiguousarray(c),
                      px=np.ascontiguousarray(px), sigma=np.ascontiguousarray(sig_px),
                      cov2d=np.ascontiguousarray(cov2d), rot_cov=np.ascontiguousarray(rot_cov),
                      center_cov=np.ascontiguousarray(center_cov), kvar=np.zeros((T, n, 5)))


def two_view_batch(cfg: TwoViewConfig, trials) -> TrialBatch:
    """Generate the given trial indices of a two-view study."""
    trials = np.asarray(trials)
    T = len(trials)
    z_px = np.empty((T, 2, 2))
    z_pose = np.empty((T, 2, 6))
    u = np.empty((T, 2, 2))
    for k, t in enumerate(trials):
        rng = trial_rng(cfg.seed, t)
        z_px[k] = rng.standard_normal((2, 2))
        z_pose[k] = rng.standard_normal((2, 6))
        u[k] = rng.uniform(0.5, 2.0, size=(2, 2))

    X = np.zeros((T, 3))
    centers = np.array([[0.0, cfg.y1, cfg.z1], [0.0, 2.0, -2.0]])
    R0 = np.stack([look_at_rotation(ci, np.zeros(3)) for ci in centers])
    R_true = np.broadcast_to(R0, (T, 2, 3, 3))
    c_true = np.broadcast_to(centers, (T, 2, 3))
    ones = np.ones((T, 2))
    b = _finish(X, R_true, c_true, cfg.focal, cfg.sigma_px * ones,
                cfg.sigma_phi * DEG * cfg.pose_scale * ones, cfg.sigma_c * cfg.pose_scale * ones,
                z_px, z_pose)
    b.corrupt_rot_cov = np.ascontiguousarray(b.rot_cov * u[..., 0, None, None])
    b.corrupt_center_cov = np.ascontiguousarray(b.center_cov * u[..., 1, None, None])
    return b


def n_view_batch(cfg: NViewConfig, trials) -> TrialBatch:
    """Generate the given trial indices of an n-view study."""
    trials = np.asarray(trials)
    T, m = len(trials), cfg.m
    u_pos = np.empty((T, m, 3))
    u_scale = np.empty((T, m, 2))
    z_jit = np.empty((T, m, 3))
    z_px = np.empty((T, m, 2))
    z_pose = np.empty((T, m, 6))
    for k, t in enumerate(trials):
        rng = trial_rng(cfg.seed, t)
        u_pos[k] = rng.random((m, 3))
        u_scale[k] = rng.random((m, 2))
        z_jit[k] = rng.standard_normal((m, 3))
        z_px[k] = rng.standard_normal((m, 2))
        z_pose[k] = rng.standard_normal((m, 6))

    lo = np.array([b[0] for b in cfg.box])
    hi = np.array([b[1] for b in cfg.box])
    c_true = lo + (hi - lo) * u_pos
    c_true[..., 2] *= cfg.depth_scale
    R_true = Rotation.from_rotvec((cfg.pointing_jitter * DEG * z_jit).reshape(-1, 3)).as_matrix()
    R_true = R_true.reshape(T, m, 3, 3)
    s_lo, s_hi = cfg.scale_range
    scale = s_lo + (s_hi - s_lo) * u_scale
    X = np.broadcast_to(np.asarray(cfg.point), (T, 3)).copy()
    return _finish(X, R_true, c_true, cfg.focal, cfg.sigma_px * np.ones((T, m)),
                   cfg.sigma_phi * DEG * scale[..., 0], cfg.sigma_c * scale[..., 1], z_px, z_pose)
