"""Pure numpy batch kernels.

Every kernel works on a batch of ``T`` tracks with ``n`` views each:

    Kinv : (T, n, 3, 3)   inverse calibration matrices
    R    : (T, n, 3, 3)   world-to-camera rotations
    c    : (T, n, 3)      camera centers
    px   : (T, n, 2)      pixel measurements

and returns ``(X, status)`` with ``X`` of shape (T, 3) and an int8 status per
track (0 ok, 1 degenerate parallax, 2 all covariances zero). Failed tracks
carry NaN positions. The compiled module ``_ckernels`` implements the same
functions with the same semantics.
"""

import numpy as np

OK, PARALLAX, NO_SOURCES = 0, 1, 2

PARALLAX_TOL = 1e-12
COND_MAX = 1e12
PINV_RTOL = 1e-10

BACKEND = "python"


def _rays(Kinv, px):
    return Kinv[..., :, 0] * px[..., 0, None] + Kinv[..., :, 1] * px[..., 1, None] + Kinv[..., :, 2]


def _skew(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([np.stack([z, -v[..., 2], v[..., 1]], -1),
                     np.stack([v[..., 2], z, -v[..., 0]], -1),
                     np.stack([-v[..., 1], v[..., 0], z], -1)], -2)


def _world_dirs(Kinv, R, px):
    v = _rays(Kinv, px)
    a = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return v, np.einsum("...ji,...j->...i", R, a)


def _partners(d):
    """Pick a high-parallax partner view for every view of every track.

    Candidates are the view least aligned with the mean ray and the view with
    the most parallax relative to that one; each view takes whichever of the
    two gives the larger sine. Linear in the number of views.
    """
    T, n, _ = d.shape
    rows = np.arange(T)
    ja = np.argmin(np.einsum("tni,ti->tn", d, d.mean(axis=1)), axis=1)
    sa = np.linalg.norm(np.cross(d, d[rows, ja][:, None, :]), axis=-1)
    jb = np.argmax(sa, axis=1)
    sb = np.linalg.norm(np.cross(d, d[rows, jb][:, None, :]), axis=-1)
    use_b = sb > sa
    partner = np.where(use_b, jb[:, None], ja[:, None])
    sine = np.where(use_b, sb, sa)
    return partner, sine


def ranges(Kinv, R, c, px):
    """Range from each camera to the point by the law of sines.

    Returns ``(rho, status)`` with ``rho`` of shape (T, n).
    """
    _, d = _world_dirs(Kinv, R, px)
    return _ranges_from_dirs(d, c)


def _ranges_from_dirs(d, c):
    T = d.shape[0]
    partner, sine = _partners(d)
    rows = np.arange(T)[:, None]
    dp = d[rows, partner]
    base = c - c[rows, partner]
    bad = (sine < PARALLAX_TOL).any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.linalg.norm(np.cross(base, dp), axis=-1) / sine
    rho[bad] = np.nan
    return rho, np.where(bad, PARALLAX, OK).astype(np.int8)


def _solve_spd(N, b, status):
    """Solve batched symmetric 3x3 systems, flagging ill-conditioned ones."""
    w, V = np.linalg.eigh(N)
    bad = ~(w[:, 0] > w[:, 2] / COND_MAX)
    status = np.where((status == OK) & bad, PARALLAX, status).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        X = np.einsum("tij,tj,tkj,tk->ti", V, 1.0 / w, V, b)
    X[status != OK] = np.nan
    return X, status


def midpoint(Kinv, R, c, px):
    _, d = _world_dirs(Kinv, R, px)
    P = np.eye(3) - d[..., :, None] * d[..., None, :]
    N = P.sum(axis=1)
    b = np.einsum("tnij,tnj->ti", P, c)
    return _solve_spd(N, b, np.zeros(len(N), np.int8))


def _stacked_solve(v, R, c, q, status):
    """Least squares on the stacked rows ``q S [v x] R`` via QR."""
    T, n = v.shape[:2]
    A = (_skew(v)[..., :2, :] @ R) * q[..., None, None]
    b = np.einsum("tnij,tnj->tni", A, c)
    A = A.reshape(T, 2 * n, 3)
    b = b.reshape(T, 2 * n)
    Q, Rf = np.linalg.qr(A)
    diag = np.abs(np.diagonal(Rf, axis1=1, axis2=2))
    bad = ~(diag.min(axis=1) > PARALLAX_TOL * diag.max(axis=1))
    status = np.where((status == OK) & bad, PARALLAX, status).astype(np.int8)
    ok = status == OK
    Rf[~ok] = np.eye(3)
    y = np.einsum("tki,tk->ti", Q, b)
    X = np.linalg.solve(Rf, y[..., None])[..., 0]
    X[~ok] = np.nan
    return X, status


def dlt(Kinv, R, c, px):
    v = _rays(Kinv, px)
    return _stacked_solve(v, R, c, np.ones(v.shape[:2]), np.zeros(len(v), np.int8))


def lost(Kinv, R, c, px, sigma):
    """Stacked sine system weighted by ``|K^-1 x| / (K^-1[0,0] sigma rho)``."""
    v, d = _world_dirs(Kinv, R, px)
    rho, status = _ranges_from_dirs(d, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.linalg.norm(v, axis=-1) / (Kinv[..., 0, 0] * sigma * rho)
    q[status != OK] = 1.0
    return _stacked_solve(v, R, c, q, status)


def residual_covariances(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, w):
    """Batched residual covariances for lines of sight scaled to ``w = R (X - c)``."""
    v = _rays(Kinv, px)
    wx = _skew(w)
    vx = _skew(v)
    Jx = -wx @ Kinv[..., :, :2]
    S = Jx @ cov2d @ np.swapaxes(Jx, -1, -2)
    Jphi = vx @ wx
    S += Jphi @ rot_cov @ np.swapaxes(Jphi, -1, -2)
    Jc = vx @ R
    S += Jc @ center_cov @ np.swapaxes(Jc, -1, -2)
    # fx, skew, cx, fy, cy -> K[l, m]
    for k, (l, m) in enumerate(((0, 0), (0, 1), (0, 2), (1, 1), (1, 2))):
        j = np.einsum("...ij,...j->...i", wx, Kinv[..., :, l]) * v[..., m, None]
        S += kvar[..., k, None, None] * (j[..., :, None] * j[..., None, :])
    return 0.5 * (S + np.swapaxes(S, -1, -2)), v, vx


def lostu(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, hint=None, diagonal=False):
    """Normal equations weighted by the rank-2 pseudo-inverse of each residual covariance.

    With ``hint`` (T, 3) the Jacobians are evaluated at that point; otherwise
    the law-of-sines ranges scale the measured rays.
    """
    T, n = px.shape[:2]
    v, d = _world_dirs(Kinv, R, px)
    if hint is None:
        rho, status = _ranges_from_dirs(d, c)
        rho = np.where(np.isfinite(rho), rho, 0.0)
        w = v / np.linalg.norm(v, axis=-1, keepdims=True) * rho[..., None]
    else:
        status = np.zeros(T, np.int8)
        w = np.einsum("tnij,tnj->tni", R, hint[:, None, :] - c)
    S, v, vx = residual_covariances(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, w)

    # Every view needs a nonzero covariance for its weight to exist.
    empty = ~S.reshape(T, n, 9).any(axis=-1).all(axis=-1)
    status = np.where((status == OK) & empty, NO_SOURCES, status).astype(np.int8)

    if diagonal:
        dS = np.diagonal(S, axis1=-2, axis2=-1)
        keep = dS > PINV_RTOL * dS.max(axis=-1, keepdims=True)
        inv = np.where(keep, 1.0 / np.where(keep, dS, 1.0), 0.0)
        P = inv[..., :, None] * np.eye(3)
    else:
        lam, V = np.linalg.eigh(S)
        keep = lam > PINV_RTOL * lam[..., 2:3]
        keep[..., 0] = False
        inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        P = (V * inv[..., None, :]) @ np.swapaxes(V, -1, -2)

    B = vx @ R
    Nj = np.swapaxes(B, -1, -2) @ P @ B
    N = Nj.sum(axis=1)
    b = np.einsum("tnij,tnj->ti", Nj, c)
    bad = status != OK
    N[bad] = np.eye(3)
    X, st = _solve_spd(N, b, np.zeros(T, np.int8))
    status = np.where(bad, status, st).astype(np.int8)
    X[status != OK] = np.nan
    return X, status
