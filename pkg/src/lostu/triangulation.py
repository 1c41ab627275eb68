"""Point triangulation from a track of calibrated views.

Five solvers share the data model of :mod:`lostu.geometry`:

* ``midpoint`` -- least squares on point-to-ray distances;
* ``dlt``      -- unweighted stacked sine system;
* ``lost``     -- the stacked system weighted for isotropic pixel noise;
* ``lostu``    -- normal equations weighted by the pseudo-inverse of the
  full residual covariance (pixel, rotation, center and calibration noise);
* ``hs``       -- two-view epipolar correction followed by the DLT.

None of them iterates. Positions come from the batch kernels in
:mod:`lostu.kernels`; the covariance and cost bookkeeping lives here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import hs as _hs
from . import kernels
from .errors import AllSourcesZero, DegenerateParallax, RankDeficient, TwoViewOnly
from .geometry import Track, View, skew
from .residuals import INTERSECTION_SOURCES, residual, residual_covariance

#: Drops the redundant third row of ``[v x]`` when ``v[2] == 1``.
SELECT = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

COND_MAX = 1e12


class Method(str, enum.Enum):
    MIDPOINT = "midpoint"
    DLT = "dlt"
    LOST = "lost"
    LOSTU = "lostu"
    HS = "hs"


@dataclass(frozen=True)
class PointEstimate:
    position: np.ndarray
    covariance: np.ndarray
    residual_cost: float
    method: Method


@dataclass(frozen=True)
class LostWeights:
    weights: np.ndarray

    def __post_init__(self):
        if not np.all(self.weights > 0):
            raise ValueError("LOST weights must be positive")


def _gather(track: Track, views: Sequence[View], min_views=2):
    if len(track) < min_views:
        raise RankDeficient(f"track {track.point_id} has {len(track)} view(s), need {min_views}")
    vs = [views[j] for j in track.view_ids]
    obs = [o for _, o in track.entries]
    Kinv = np.stack([v.intrinsics.inverse for v in vs])[None]
    R = np.stack([v.rotation for v in vs])[None]
    c = np.stack([v.center for v in vs])[None]
    px = np.stack([o.pixel[:2] for o in obs])[None]
    return vs, obs, Kinv, R, c, px


def _raise_status(status, track):
    if status == kernels.PARALLAX:
        raise DegenerateParallax(f"track {track.point_id} has no usable parallax")
    if status == kernels.NO_SOURCES:
        raise AllSourcesZero(f"track {track.point_id} has a view with zero residual covariance")


def _world_rays(vs, obs):
    d = np.stack([v.rotation.T @ (v.intrinsics.inverse @ o.pixel) for v, o in zip(vs, obs)])
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _partner(d, j, rule):
    sines = np.linalg.norm(np.cross(d[j], d), axis=1)
    if rule == "max_parallax":
        p = int(np.argmax(sines))
    elif rule == "extremal":
        ja = int(np.argmin(d @ d.mean(axis=0)))
        jb = int(np.argmax(np.linalg.norm(np.cross(d[ja], d), axis=1)))
        p = jb if sines[jb] > sines[ja] else ja
    else:
        raise ValueError(f"unknown pair rule {rule!r}")
    return p, sines[p]


def bootstrap_range(track: Track, views: Sequence[View], j: int, pair_rule="extremal"):
    """Range from view ``j`` to the tracked point by the law of sines.

    The partner measurement is chosen by ``pair_rule``: ``"max_parallax"``
    scans every view of the track; ``"extremal"`` (the rule the solvers use)
    compares only the ray least aligned with the mean ray and that ray's
    highest-parallax partner, which keeps the cost linear in the track length.

    Raises
    ------
    DegenerateParallax
        If no partner ray is at least 1e-12 (sine) away from parallel.
    """
    vs, obs, *_ = _gather(track, views)
    k = track.view_ids.index(j)
    d = _world_rays(vs, obs)
    p, sine = _partner(d, k, pair_rule)
    if sine < 1e-12:
        raise DegenerateParallax(f"track {track.point_id}: ray of view {j} has no parallax")
    return float(np.linalg.norm(np.cross(vs[k].center - vs[p].center, d[p])) / sine)


def _ranges(track, Kinv, R, c, px):
    rho, status = kernels.ranges(Kinv, R, c, px)
    _raise_status(status[0], track)
    return rho[0]


def _sigmas(obs, sigma_px):
    if sigma_px is None:
        sig = []
        for o in obs:
            cv = o.cov2d
            if not (cv[0, 0] > 0 and np.isclose(cv[0, 0], cv[1, 1]) and cv[0, 1] == 0):
                raise ValueError("sigma_px is required unless every cov2d is isotropic and nonzero")
            sig.append(np.sqrt(cv[0, 0]))
        return np.array(sig)
    sig = np.broadcast_to(np.asarray(sigma_px, dtype=float), (len(obs),)).copy()
    if not np.all(sig > 0):
        raise ValueError("pixel standard deviations must be positive")
    return sig


def lost_weights(track: Track, views: Sequence[View], sigma_px=None) -> LostWeights:
    """Per-view weights ``|K^-1 x| / (K^-1[0,0] sigma rho)`` of the LOST system."""
    vs, obs, Kinv, R, c, px = _gather(track, views)
    rho = _ranges(track, Kinv, R, c, px)
    sig = _sigmas(obs, sigma_px)
    v = np.einsum("nij,nj->ni", Kinv[0], np.column_stack([px[0], np.ones(len(obs))]))
    return LostWeights(np.linalg.norm(v, axis=1) / (Kinv[0, :, 0, 0] * sig * rho))


def _rays(vs, obs):
    return [v.intrinsics.inverse @ o.pixel for v, o in zip(vs, obs)]


def _blocks(vs, obs, selectors):
    """Rows ``L_j [v_j x] R_j`` of a linear estimator for per-view selectors ``L_j``."""
    return [L @ skew(r) @ v.rotation for L, r, v in zip(selectors, _rays(vs, obs), vs)]


def _system_cost(blocks, vs, X):
    return float(sum(np.sum((B @ (X - v.center)) ** 2) for B, v in zip(blocks, vs)))


def _available_sources(vs, obs):
    srcs = set()
    for v, o in zip(vs, obs):
        if o.cov2d.any():
            srcs.add("pixel")
        if v.uncertainty.rot_cov.any():
            srcs.add("rotation")
        if v.uncertainty.center_cov.any():
            srcs.add("center")
        if v.intrinsics_variances().any():
            srcs.add("intrinsics")
    return srcs


def linear_estimator_covariance(selectors, vs, obs, X, sources=INTERSECTION_SOURCES):
    """First-order covariance of a linear estimator with rows ``L_j [v_j x] R_j``.

    With ``B_j = L_j [v_j x] R_j`` the estimate error is
    ``-N^-1 sum_j B_j^T L_j eps_j`` where ``N = sum_j B_j^T B_j``, giving the
    sandwich ``N^-1 (sum_j G_j S_j G_j^T) N^-1`` with ``G_j = B_j^T L_j`` and
    ``S_j`` the residual covariance at ``X``. Views without any active
    covariance contribute nothing.
    """
    blocks = _blocks(vs, obs, selectors)
    Ninv = np.linalg.inv(sum(B.T @ B for B in blocks))
    sources = set(sources) & _available_sources(vs, obs)
    meat = np.zeros((3, 3))
    for L, B, v, o in zip(selectors, blocks, vs, obs):
        try:
            S = residual_covariance(o, v, X_hint=X, sources=sources).matrix
        except AllSourcesZero:
            continue
        G = B.T @ L
        meat += G @ S @ G.T
    cov = Ninv @ meat @ Ninv
    return 0.5 * (cov + cov.T)


def _estimate(X, selectors, vs, obs, method):
    blocks = _blocks(vs, obs, selectors)
    return PointEstimate(X, linear_estimator_covariance(selectors, vs, obs, X),
                         _system_cost(blocks, vs, X), Method(method))


def triangulate_midpoint(track: Track, views: Sequence[View]) -> PointEstimate:
    """Point minimizing the summed squared distances to the back-projected rays."""
    vs, obs, Kinv, R, c, px = _gather(track, views)
    X, status = kernels.midpoint(Kinv, R, c, px)
    _raise_status(status[0], track)
    selectors = [np.eye(3) / np.linalg.norm(r) for r in _rays(vs, obs)]
    return _estimate(X[0], selectors, vs, obs, Method.MIDPOINT)


def triangulate_dlt(track: Track, views: Sequence[View], normalize_los=False) -> PointEstimate:
    """Unweighted linear triangulation.

    By default each view contributes the two independent rows of
    ``[K^-1 x x] R``. With ``normalize_los`` the ray is scaled to unit length
    and all three rows are kept, which reproduces the midpoint solution.
    """
    vs, obs, Kinv, R, c, px = _gather(track, views)
    if not normalize_los:
        X, status = kernels.dlt(Kinv, R, c, px)
        _raise_status(status[0], track)
        return _estimate(X[0], [SELECT] * len(vs), vs, obs, Method.DLT)

    selectors = [np.eye(3) / np.linalg.norm(r) for r in _rays(vs, obs)]
    blocks = _blocks(vs, obs, selectors)
    A = np.vstack(blocks)
    b = np.concatenate([B @ v.center for B, v in zip(blocks, vs)])
    Q, Rf = np.linalg.qr(A)
    diag = np.abs(np.diag(Rf))
    if not diag.min() > 1e-12 * diag.max():
        raise DegenerateParallax(f"track {track.point_id} has no usable parallax")
    X = np.linalg.solve(Rf, Q.T @ b)
    return _estimate(X, selectors, vs, obs, Method.DLT)


def triangulate_lost(track: Track, views: Sequence[View], sigma_px=None) -> PointEstimate:
    """Stacked sine system weighted for isotropic pixel noise.

    ``sigma_px`` is a scalar or per-view pixel standard deviation; when omitted
    it is read from the (isotropic) observation covariances.
    """
    vs, obs, Kinv, R, c, px = _gather(track, views)
    sig = _sigmas(obs, sigma_px)
    X, status = kernels.lost(Kinv, R, c, px, np.ascontiguousarray(sig[None]))
    _raise_status(status[0], track)
    q = lost_weights(track, views, sig).weights
    return _estimate(X[0], [qj * SELECT for qj in q], vs, obs, Method.LOST)


def _covariance_arrays(vs, obs, sources):
    n = len(vs)
    cov2d = np.stack([o.cov2d for o in obs]) if "pixel" in sources else np.zeros((n, 2, 2))
    rot = (np.stack([v.uncertainty.rot_cov for v in vs]) if "rotation" in sources
           else np.zeros((n, 3, 3)))
    cen = (np.stack([v.uncertainty.center_cov for v in vs]) if "center" in sources
           else np.zeros((n, 3, 3)))
    kvar = (np.stack([v.intrinsics_variances() for v in vs]) if "intrinsics" in sources
            else np.zeros((n, 5)))
    return cov2d[None], rot[None], cen[None], kvar[None]


def _check_sources(sources):
    sources = frozenset(sources)
    bad = sources - INTERSECTION_SOURCES
    if bad:
        raise ValueError(f"sources {sorted(bad)} cannot weight an intersection")
    return sources


def triangulate_lostu(track: Track, views: Sequence[View],
                      sources: Iterable[str] = INTERSECTION_SOURCES,
                      diagonal=False, reweight=False, hint=None) -> PointEstimate:
    """Maximum-likelihood linear triangulation under pixel and camera noise.

    Parameters
    ----------
    sources
        Covariances that enter the residual covariance. The point itself is
        never a source here.
    diagonal
        Keep only the diagonal of each residual covariance before inverting.
    reweight
        Re-assemble the covariances at the first solution and solve once more.
    hint
        Evaluate the Jacobians at this point instead of at law-of-sines ranges.
    """
    sources = _check_sources(sources)
    vs, obs, Kinv, R, c, px = _gather(track, views)
    covs = _covariance_arrays(vs, obs, sources)
    h = None if hint is None else np.asarray(hint, dtype=float).reshape(1, 3)
    X, status = kernels.lostu(Kinv, R, c, px, *covs, hint=h, diagonal=diagonal)
    _raise_status(status[0], track)
    if reweight:
        h = X
        X, status = kernels.lostu(Kinv, R, c, px, *covs, hint=h, diagonal=diagonal)
        _raise_status(status[0], track)
    X = X[0]

    if h is None:
        rho = _ranges(track, Kinv, R, c, px)
        hints = [dict(range_hint=r) for r in rho]
    else:
        hints = [dict(X_hint=h[0])] * len(vs)
    cost = 0.0
    for v, o, hk in zip(vs, obs, hints):
        rc = residual_covariance(o, v, sources=sources, strict_rank2=not diagonal,
                                 diagonal=diagonal, **hk)
        e = residual(o, v, X)
        cost += float(e @ rc.pseudo_inverse @ e)
    cov = point_covariance(track, views, X, sources)
    return PointEstimate(X, cov, cost, Method.LOSTU)


def lostu_normal_matrix(track: Track, views: Sequence[View], X,
                        sources: Iterable[str] = INTERSECTION_SOURCES):
    """Normal matrix ``sum R^T [v x]^T S^+ [v x] R`` with covariances evaluated at ``X``."""
    sources = _check_sources(sources)
    vs, obs, *_ = _gather(track, views)
    N = np.zeros((3, 3))
    for v, o in zip(vs, obs):
        rc = residual_covariance(o, v, X_hint=X, sources=sources, strict_rank2=True)
        B = skew(v.intrinsics.inverse @ o.pixel) @ v.rotation
        N += B.T @ rc.pseudo_inverse @ B
    return 0.5 * (N + N.T)


def point_covariance(track: Track, views: Sequence[View], X,
                     sources: Iterable[str] = INTERSECTION_SOURCES):
    """Covariance of the maximum-likelihood point, the inverse normal matrix.

    Raises
    ------
    RankDeficient
        If the normal matrix is singular to working precision.
    """
    N = lostu_normal_matrix(track, views, X, sources)
    w = np.linalg.eigvalsh(N)
    if not w[0] > w[-1] / COND_MAX:
        raise RankDeficient(f"normal matrix of track {track.point_id} is singular")
    cov = np.linalg.inv(N)
    return 0.5 * (cov + cov.T)


def triangulate_hs(track: Track, views: Sequence[View]) -> PointEstimate:
    """Two-view L2-optimal triangulation (epipolar correction, then DLT)."""
    if len(track) != 2:
        raise TwoViewOnly(f"track {track.point_id} has {len(track)} views")
    vs, obs, Kinv, R, c, px = _gather(track, views)
    X, status, corrected = _hs.hs(Kinv, R, c, px)
    _raise_status(status[0], track)
    X = X[0]
    cost = float(np.sum((corrected[0] - px[0]) ** 2))
    # To first order the estimator coincides with LOST; reuse its rows.
    try:
        sig = _sigmas(obs, None)
    except ValueError:
        sig = np.ones(2)
    rho = np.array([np.linalg.norm(X - v.center) for v in vs])
    q = [np.linalg.norm(r) / (v.intrinsics.inverse[0, 0] * s * p)
         for r, v, s, p in zip(_rays(vs, obs), vs, sig, rho)]
    cov = linear_estimator_covariance([qj * SELECT for qj in q], vs, obs, X)
    return PointEstimate(X, cov, cost, Method.HS)


SOLVERS = {
    Method.MIDPOINT: triangulate_midpoint,
    Method.DLT: triangulate_dlt,
    Method.LOST: triangulate_lost,
    Method.LOSTU: triangulate_lostu,
    Method.HS: triangulate_hs,
}


def triangulate(track: Track, views: Sequence[View], method="lostu", **kwargs) -> PointEstimate:
    return SOLVERS[Method(method)](track, views, **kwargs)
