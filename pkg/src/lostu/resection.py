"""Camera-center estimation from known points and a known orientation.

This is the intersection problem with the roles of point and camera
swapped: each observation contributes ``R^T [v x]^T S^+ [v x] R`` to a 3x3
normal system in the center, and the residual covariance collects pixel,
rotation, calibration and point noise (the unknown center is excluded).
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import RankDeficient
from .geometry import Observation, View, skew
from .residuals import RESECTION_SOURCES, residual_covariance

COND_MAX = 1e12


def _ranges_from_points(view, Xs, obs):
    d = np.stack([view.rotation.T @ (view.intrinsics.inverse @ o.pixel) for o in obs])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    ja = int(np.argmin(d @ d.mean(axis=0)))
    jb = int(np.argmax(np.linalg.norm(np.cross(d[ja], d), axis=1)))
    rho = np.empty(len(obs))
    for i in range(len(obs)):
        sa = np.linalg.norm(np.cross(d[i], d[ja]))
        sb = np.linalg.norm(np.cross(d[i], d[jb]))
        p, sine = (jb, sb) if sb > sa else (ja, sa)
        if sine < 1e-12:
            raise RankDeficient("observed points are collinear with the camera")
        rho[i] = np.linalg.norm(np.cross(Xs[i] - Xs[p], d[p])) / sine
    return rho


def resection_normal_system(view: View, points, point_covs=None,
                            sources: Iterable[str] = RESECTION_SOURCES, ranges=None):
    """Normal matrix and right-hand side of the center estimate.

    Returns ``(N, b, weights)`` where ``weights`` are the per-point 3x3
    pseudo-inverses of the residual covariance.
    """
    sources = frozenset(sources)
    if "center" in sources:
        raise ValueError("the camera center cannot weight its own estimate")
    Xs = np.array([np.asarray(X, dtype=float) for X, _ in points])
    obs = [o for _, o in points]
    if ranges is None:
        ranges = _ranges_from_points(view, Xs, obs)
    covs = point_covs if point_covs is not None else [None] * len(obs)
    N = np.zeros((3, 3))
    b = np.zeros(3)
    weights = []
    for X, o, rho, P in zip(Xs, obs, ranges, covs):
        rc = residual_covariance(o, view, range_hint=rho, sources=sources, point_cov=P,
                                 strict_rank2=True)
        B = skew(view.intrinsics.inverse @ o.pixel) @ view.rotation
        Nj = B.T @ rc.pseudo_inverse @ B
        N += Nj
        b += Nj @ X
        weights.append(rc.pseudo_inverse)
    return 0.5 * (N + N.T), b, weights


def estimate_camera_center(view: View, points: Sequence[Tuple[np.ndarray, Observation]],
                           point_covs: Optional[Sequence[np.ndarray]] = None,
                           sources: Iterable[str] = RESECTION_SOURCES):
    """Maximum-likelihood camera center for a view with known rotation and calibration.

    Parameters
    ----------
    view
        Camera whose rotation, calibration and uncertainties are used; its
        center is ignored.
    points
        ``(X_i, observation_i)`` pairs of known world points.
    point_covs
        Optional 3x3 covariance per world point.

    Returns
    -------
    center : (3,) ndarray
    covariance : (3, 3) ndarray
        Inverse of the normal matrix.

    Raises
    ------
    RankDeficient
        For fewer than two points or lines of sight that are all parallel.
    """
    if len(points) < 2:
        raise RankDeficient(f"{len(points)} point(s) cannot fix a camera center")
    N, b, _ = resection_normal_system(view, points, point_covs, sources)
    w, V = np.linalg.eigh(N)
    if not w[0] > w[-1] / COND_MAX:
        raise RankDeficient("center normal matrix is singular")
    center = V @ ((V.T @ b) / w)
    cov = (V / w) @ V.T
    return center, 0.5 * (cov + cov.T)
