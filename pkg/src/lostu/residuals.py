"""Law-of-sines residual, its Jacobians and residual-covariance assembly.

The residual of a measurement ``x`` of point ``X`` in a view is

    eps = [K^-1 x  x] R (X - c)

which vanishes when the measured ray and the true line of sight are
colinear. Rotation Jacobians use the frame-perturbation convention
``R(phi) = exp(-[phi x]) R``; covariances are insensitive to that sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import AllSourcesZero, MissingScale
from .geometry import INTRINSIC_ENTRIES, INTRINSIC_ORDER, Observation, View, skew

K_AXIS = np.array([0.0, 0.0, 1.0])

PINV_RTOL = 1e-10

#: Sources that contribute to the residual covariance of an intersection.
INTERSECTION_SOURCES = frozenset({"pixel", "rotation", "center", "intrinsics"})
#: Sources for resection: the point replaces the (unknown) camera center.
RESECTION_SOURCES = frozenset({"pixel", "rotation", "point", "intrinsics"})
ALL_SOURCES = INTERSECTION_SOURCES | {"point"}

# Jacobians that need R (X - c), hence a point or range hint.
_SCALED = frozenset({"pixel", "rotation", "intrinsics"})


def _ray(obs: Observation, view: View):
    return view.intrinsics.inverse @ obs.pixel


def residual(obs: Observation, view: View, X):
    return np.cross(_ray(obs, view), view.rotation @ (np.asarray(X, dtype=float) - view.center))


def jac_pixel(obs: Observation, view: View, X):
    """3x2 partial of the residual with respect to the pixel coordinates."""
    w = view.rotation @ (np.asarray(X, dtype=float) - view.center)
    return -skew(w) @ view.intrinsics.inverse[:, :2]


def jac_center(obs: Observation, view: View):
    return -skew(_ray(obs, view)) @ view.rotation


def jac_rotation(obs: Observation, view: View, X):
    w = view.rotation @ (np.asarray(X, dtype=float) - view.center)
    return skew(_ray(obs, view)) @ skew(w)


def jac_point(obs: Observation, view: View):
    return skew(_ray(obs, view)) @ view.rotation


def _check_entry(l, m):
    if (l, m) not in INTRINSIC_ENTRIES.values():
        raise ValueError(f"K[{l},{m}] is not a free calibration parameter")


def jac_intrinsic_entry(obs: Observation, view: View, X, l: int, m: int):
    """Partial of the residual with respect to the calibration entry ``K[l, m]``.

    Only the five upper-triangular entries other than ``K[2, 2]`` are free.
    """
    _check_entry(l, m)
    w = view.rotation @ (np.asarray(X, dtype=float) - view.center)
    Kinv = view.intrinsics.inverse
    dKinv = -np.outer(Kinv[:, l], Kinv[m, :])
    return -skew(w) @ dKinv @ obs.pixel


@dataclass(frozen=True)
class ResidualCovariance:
    matrix: np.ndarray
    pseudo_inverse: np.ndarray
    rank: int
    #: Jacobians that consumed the point/range hint.
    scaled_by_hint: tuple = ()


def pseudo_inverse(S, rtol=PINV_RTOL, strict_rank2=False):
    """Symmetric pseudo-inverse through an eigendecomposition.

    Eigenvalues below ``rtol * lambda_max`` are discarded. With
    ``strict_rank2`` the smallest eigenvalue is discarded unconditionally,
    which restores the analytic rank of a residual covariance perturbed by
    measurement noise.

    Returns
    -------
    pinv : ndarray
    rank : int
    """
    S = 0.5 * (S + S.T)
    w, v = np.linalg.eigh(S)
    keep = w > rtol * max(w[-1], 0.0)
    if strict_rank2:
        keep[0] = False
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv) @ v.T, int(keep.sum())


def diagonal_pseudo_inverse(S, rtol=PINV_RTOL):
    d = np.diag(S).copy()
    keep = d > rtol * max(d.max(), 0.0)
    inv = np.where(keep, 1.0 / np.where(keep, d, 1.0), 0.0)
    return np.diag(inv), int(keep.sum())


def residual_covariance(obs: Observation, view: View, X_hint=None, range_hint=None,
                        sources: Iterable[str] = INTERSECTION_SOURCES,
                        point_cov=None, strict_rank2=False, diagonal=False):
    """Project the enabled parameter covariances onto the residual.

    Parameters
    ----------
    X_hint, range_hint
        Exactly one is needed when a scale-dependent Jacobian (pixel, rotation,
        intrinsics) is enabled with nonzero covariance. With a range only,
        ``R (X - c)`` is replaced by ``range_hint * a`` along the measured ray.
    sources
        Subset of ``{"pixel", "rotation", "center", "intrinsics", "point"}``.
    point_cov
        3x3 covariance of the world point, used by the ``"point"`` source.
    strict_rank2, diagonal
        Pseudo-inverse variants, see :func:`pseudo_inverse`. ``diagonal``
        keeps only the diagonal of the covariance before inverting.

    Raises
    ------
    AllSourcesZero
        If every enabled covariance is zero.
    MissingScale
        If a scale-dependent source is active and no hint was given.
    """
    sources = frozenset(sources)
    unknown = sources - ALL_SOURCES
    if unknown:
        raise ValueError(f"unknown covariance sources {sorted(unknown)}")
    if X_hint is not None and range_hint is not None:
        raise ValueError("supply at most one of X_hint and range_hint")

    unc = view.uncertainty
    kvar = view.intrinsics_variances()
    active = {
        "pixel": obs.cov2d.any(),
        "rotation": unc.rot_cov.any(),
        "center": unc.center_cov.any(),
        "intrinsics": kvar.any(),
        "point": point_cov is not None and np.any(point_cov),
    }
    active = {k for k, on in active.items() if on and k in sources}
    if not active:
        raise AllSourcesZero("every enabled covariance is zero")

    scaled = tuple(sorted(active & _SCALED))
    v = _ray(obs, view)
    R = view.rotation
    if scaled:
        if X_hint is not None:
            w = R @ (np.asarray(X_hint, dtype=float) - view.center)
        elif range_hint is not None:
            w = float(range_hint) * v / np.linalg.norm(v)
        else:
            raise MissingScale(f"{', '.join(scaled)} Jacobians need a point or range hint")
    else:
        w = None

    vx = skew(v)
    S = np.zeros((3, 3))
    if "pixel" in active:
        J = -skew(w) @ view.intrinsics.inverse[:, :2]
        S += J @ obs.cov2d @ J.T
    if "rotation" in active:
        J = vx @ skew(w)
        S += J @ unc.rot_cov @ J.T
    if "center" in active:
        J = -vx @ R
        S += J @ unc.center_cov @ J.T
    if "point" in active:
        J = vx @ R
        S += J @ np.asarray(point_cov, dtype=float) @ J.T
    if "intrinsics" in active:
        Kinv = view.intrinsics.inverse
        wx = skew(w)
        for name, var in zip(INTRINSIC_ORDER, kvar):
            if var:
                l, m = INTRINSIC_ENTRIES[name]
                j = wx @ Kinv[:, l] * v[m]
                S += var * np.outer(j, j)
    S = 0.5 * (S + S.T)

    if diagonal:
        pinv, rank = diagonal_pseudo_inverse(S)
    else:
        pinv, rank = pseudo_inverse(S, strict_rank2=strict_rank2)
    return ResidualCovariance(S, pinv, rank, scaled)


def mahalanobis_cost(track, views, X, weights):
    """Sum of ``eps^T W eps`` over a track for fixed 3x3 weights ``W``."""
    return float(sum(r @ W @ r for r, W in
                     zip((residual(o, views[j], X) for j, o in track.entries), weights)))
