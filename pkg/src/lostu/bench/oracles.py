"""Iterative reference minimizers used as baselines by the n-view study.

These stand in for Levenberg-Marquardt refinement of a DLT seed. They share
no code with the linear solvers beyond the residual covariance model: the
costs are evaluated directly and minimized by a damped Gauss-Newton loop,
batched over trials.
"""

import numpy as np

from .._pykernels import residual_covariances


def _lm(fn, X0, iterations):
    """Batched Levenberg-Marquardt. ``fn(X)`` returns residuals (T, k) and Jacobians (T, k, 3)."""
    X = np.array(X0, dtype=float)
    ok = np.all(np.isfinite(X), axis=1)
    X[~ok] = 0.0
    r, J = fn(X)
    cost = np.einsum("tk,tk->t", r, r)
    lam = np.full(len(X), 1e-3)
    for _ in range(iterations):
        H = np.einsum("tki,tkj->tij", J, J)
        g = np.einsum("tki,tk->ti", J, r)
        A = H + lam[:, None, None] * (np.diagonal(H, axis1=1, axis2=2)[:, :, None] * np.eye(3))
        A[~ok] = np.eye(3)
        Xn = X - np.linalg.solve(A, g[..., None])[..., 0]
        rn, Jn = fn(Xn)
        cn = np.einsum("tk,tk->t", rn, rn)
        better = (cn <= cost) & ok & np.isfinite(cn)
        X[better], r[better], J[better], cost[better] = Xn[better], rn[better], Jn[better], cn[better]
        lam = np.clip(np.where(better, lam * 0.1, lam * 10.0), 1e-12, 1e12)
    X[~ok] = np.nan
    cost[~ok] = np.nan
    return X, cost


def reprojection_minimizer(Kinv, R, c, px, sigma, X0, iterations=10):
    """Minimize summed squared pixel errors, each view scaled by ``1/sigma``, seeded at ``X0``.

    Returns ``(X, cost)`` for each trial.
    """
    P = np.linalg.inv(Kinv) @ R
    w = 1.0 / np.where(sigma > 0, sigma, 1.0)

    def fn(X):
        p = np.einsum("tnij,tnj->tni", P, X[:, None, :] - c)
        z = p[..., 2:]
        e = (p[..., :2] / z - px) * w[..., None]
        J = (P[..., :2, :] - (p[..., :2, None] / z[..., None]) * P[..., 2:3, :]) / z[..., None]
        J = J * w[..., None, None]
        return e.reshape(len(X), -1), J.reshape(len(X), -1, 3)

    return _lm(fn, X0, iterations)


def whitened_residuals(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, X):
    """Residuals ``eps`` premultiplied by a rank-2 inverse square root of their covariance at ``X``.

    The summed squares equal ``sum eps^T S(X)^+ eps``. Also returns the
    whitened point Jacobian with the weights held fixed.
    """
    w = np.einsum("tnij,tnj->tni", R, X[:, None, :] - c)
    S, v, vx = residual_covariances(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, w)
    lam, V = np.linalg.eigh(S)
    keep = lam > 1e-10 * lam[..., 2:3]
    keep[..., 0] = False
    root = np.where(keep, 1.0 / np.sqrt(np.where(keep, lam, 1.0)), 0.0)
    W = root[..., :, None] * np.swapaxes(V, -1, -2)
    r = np.einsum("tnij,tnj->tni", W @ vx, w)
    J = W @ vx @ R
    T = len(X)
    return r.reshape(T, -1), J.reshape(T, -1, 3)


def mahalanobis_cost(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, X):
    r, _ = whitened_residuals(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, X)
    return np.einsum("tk,tk->t", r, r)


def mahalanobis_minimizer(Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar, X0, iterations=8):
    """Minimize ``sum eps^T S(X)^+ eps`` with the covariance re-evaluated at every iterate.

    Steps use the Jacobian with the weights frozen at the current point;
    acceptance uses the full cost. Returns ``(X, cost)``.
    """
    args = (Kinv, R, c, px, cov2d, rot_cov, center_cov, kvar)
    return _lm(lambda X: whitened_residuals(*args, X), X0, iterations)
