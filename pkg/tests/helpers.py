"""Random scene builders shared by the tests."""

import numpy as np

from lostu import (CameraIntrinsics, CameraPose, Observation, PoseUncertainty, Track, View,
                   project)
from lostu.geometry import exp_so3


def random_intrinsics(rng, skew=True):
    f = rng.uniform(300, 1200)
    return CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), rng.uniform(-50, 50),
                            rng.uniform(-50, 50), rng.uniform(-2, 2) if skew else 0.0)


def random_view(rng, X, dist=(5.0, 20.0), sigma_phi=0.0, sigma_c=0.0, kvar=None, skew=True):
    """Camera at a random position looking roughly at ``X``."""
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    c = X + rng.uniform(*dist) * d
    pose = CameraPose.look_at(c, X + 0.3 * rng.standard_normal(3))
    R = exp_so3(0.02 * rng.standard_normal(3)) @ pose.rotation
    return View(random_intrinsics(rng, skew), CameraPose(R, c),
                PoseUncertainty.isotropic(sigma_phi, sigma_c), kvar)


def random_track(rng, n, X=None, sigma_px=1.0, noise=True, **view_kw):
    """Views and a track of ``n`` observations of ``X`` with optional pixel noise."""
    X = rng.uniform(-3, 3, 3) if X is None else np.asarray(X, dtype=float)
    views = [random_view(rng, X, **view_kw) for _ in range(n)]
    entries = []
    for j, v in enumerate(views):
        xy = project(X, v).pixel[:2]
        if noise:
            xy = xy + sigma_px * rng.standard_normal(2)
        entries.append((j, Observation.isotropic(xy, sigma_px)))
    return X, views, Track(0, entries)


def perturbed_pixel(obs, delta):
    return Observation(obs.pixel[:2] + np.asarray(delta), obs.cov2d)
