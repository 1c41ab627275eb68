"""Two-view optimal triangulation by epipolar correction (Hartley-Sturm).

The measured pair is moved to the closest pair of pixels satisfying the
epipolar constraint, found as the global minimum of a degree-6 polynomial in
the pencil parameter of epipolar lines. The corrected, exactly consistent
pair is then intersected with the DLT.

All functions here operate on batches of ``T`` pairs and are vectorized
with numpy; they serve both kernel backends.
"""

import numpy as np

from . import kernels


def fundamental_from_poses(Kinv, R, c):
    """Fundamental matrices ``F`` with ``x2^T F x1 = 0`` for batches of view pairs.

    ``Kinv``, ``R`` have shape (T, 2, 3, 3) and ``c`` (T, 2, 3).
    """
    R1, R2 = R[:, 0], R[:, 1]
    t = np.einsum("tij,tj->ti", R2, c[:, 0] - c[:, 1])
    tx = np.zeros_like(R1)
    tx[:, 0, 1], tx[:, 0, 2] = -t[:, 2], t[:, 1]
    tx[:, 1, 0], tx[:, 1, 2] = t[:, 2], -t[:, 0]
    tx[:, 2, 0], tx[:, 2, 1] = -t[:, 1], t[:, 0]
    E = tx @ R2 @ np.swapaxes(R1, 1, 2)
    return np.swapaxes(Kinv[:, 1], 1, 2) @ E @ Kinv[:, 0]


def _polymul(p, q):
    """Batched polynomial product; coefficients highest degree first."""
    out = np.zeros(p.shape[:-1] + (p.shape[-1] + q.shape[-1] - 1,))
    for k in range(q.shape[-1]):
        out[..., k:k + p.shape[-1]] += p * q[..., k:k + 1]
    return out


def _polyadd(p, q):
    n = max(p.shape[-1], q.shape[-1])
    p = np.concatenate([np.zeros(p.shape[:-1] + (n - p.shape[-1],)), p], -1)
    q = np.concatenate([np.zeros(q.shape[:-1] + (n - q.shape[-1],)), q], -1)
    return p + q


def _roots(coef):
    """Roots of each row of ``coef`` (degree 6), NaN-padded where the degree drops."""
    T = coef.shape[0]
    scale = np.abs(coef).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    coef = coef / scale
    out = np.full((T, 6), np.nan, dtype=complex)
    regular = np.abs(coef[:, 0]) > 1e-12
    if regular.any():
        cr = coef[regular]
        comp = np.zeros((len(cr), 6, 6))
        comp[:, 0, :] = -cr[:, 1:] / cr[:, :1]
        comp[:, np.arange(1, 6), np.arange(5)] = 1.0
        out[regular] = np.linalg.eigvals(comp)
    for i in np.flatnonzero(~regular):
        r = np.roots(coef[i])
        out[i, :len(r)] = r
    return out


def _polish(coef, t, steps=3):
    """Newton steps on the real parts of the roots; a step is kept only if it shrinks |g|."""
    d = coef[:, :-1] * np.arange(coef.shape[1] - 1, 0, -1)

    def horner(c, x):
        out = np.zeros_like(x)
        for k in range(c.shape[1]):
            out = out * x + c[:, k:k + 1]
        return out

    g = horner(coef, t)
    for _ in range(steps):
        with np.errstate(all="ignore"):
            tn = t - g / horner(d, t)
            gn = horner(coef, tn)
            better = np.isfinite(gn) & (np.abs(gn) < np.abs(g))
        t = np.where(better, tn, t)
        g = np.where(better, gn, g)
    return t


def correct_pairs(F, x1, x2):
    """Optimally corrected pixel pairs for a batch of fundamental matrices.

    Parameters
    ----------
    F : (T, 3, 3)
    x1, x2 : (T, 2) pixel coordinates in the first and second view

    Returns
    -------
    y1, y2 : (T, 2)
        Closest pixels (summed squared distance) with ``y2^T F y1 = 0``.
    """
    T = F.shape[0]
    Ti1 = np.tile(np.eye(3), (T, 1, 1))
    Ti2 = Ti1.copy()
    Ti1[:, :2, 2] = x1
    Ti2[:, :2, 2] = x2
    Fs = np.swapaxes(Ti2, 1, 2) @ F @ Ti1

    _, _, vt = np.linalg.svd(Fs)
    e1 = vt[:, 2, :]
    _, _, vt = np.linalg.svd(np.swapaxes(Fs, 1, 2))
    e2 = vt[:, 2, :]
    e1 = e1 / np.hypot(e1[:, 0], e1[:, 1])[:, None]
    e2 = e2 / np.hypot(e2[:, 0], e2[:, 1])[:, None]

    def rot(e):
        r = np.zeros((T, 3, 3))
        r[:, 0, 0], r[:, 0, 1] = e[:, 0], e[:, 1]
        r[:, 1, 0], r[:, 1, 1] = -e[:, 1], e[:, 0]
        r[:, 2, 2] = 1.0
        return r

    Rot1, Rot2 = rot(e1), rot(e2)
    Fr = Rot2 @ Fs @ np.swapaxes(Rot1, 1, 2)
    f1, f2 = e1[:, 2], e2[:, 2]
    a, b, c, d = Fr[:, 1, 1], Fr[:, 1, 2], Fr[:, 2, 1], Fr[:, 2, 2]

    # g(t) = t ((a t + b)^2 + f2^2 (c t + d)^2)^2
    #        - (a d - b c) (1 + f1^2 t^2)^2 (a t + b) (c t + d)
    at_b = np.stack([a, b], 1)
    ct_d = np.stack([c, d], 1)
    quad = _polyadd(_polymul(at_b, at_b), (f2 ** 2)[:, None] * _polymul(ct_d, ct_d))
    term1 = _polymul(np.stack([np.ones(T), np.zeros(T)], 1), _polymul(quad, quad))
    one_ft = np.stack([f1 ** 2, np.zeros(T), np.ones(T)], 1)
    term2 = (a * d - b * c)[:, None] * _polymul(_polymul(one_ft, one_ft), _polymul(at_b, ct_d))
    g = _polyadd(term1, -term2)

    roots = _polish(g, _roots(g).real)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = roots
        ct = c[:, None] * t + d[:, None]
        at = a[:, None] * t + b[:, None]
        s = t ** 2 / (1 + f1[:, None] ** 2 * t ** 2) + ct ** 2 / (at ** 2 + f2[:, None] ** 2 * ct ** 2)
        s_inf = 1.0 / f1 ** 2 + c ** 2 / (a ** 2 + f2 ** 2 * c ** 2)
    s = np.where(np.isfinite(s), s, np.inf)
    best = np.argmin(s, axis=1)
    rows = np.arange(T)
    t_min = t[rows, best]
    use_inf = ~(s[rows, best] < np.where(np.isfinite(s_inf), s_inf, np.inf))

    l1 = np.stack([t_min * f1, np.ones(T), -t_min], 1)
    l2 = np.stack([-f2 * (c * t_min + d), a * t_min + b, c * t_min + d], 1)
    l1[use_inf] = np.stack([f1, np.zeros(T), -np.ones(T)], 1)[use_inf]
    l2[use_inf] = np.stack([-f2 * c, a, c], 1)[use_inf]

    def foot(l):
        return np.stack([-l[:, 0] * l[:, 2], -l[:, 1] * l[:, 2], l[:, 0] ** 2 + l[:, 1] ** 2], 1)

    y1 = np.einsum("tij,tkj,tk->ti", Ti1, Rot1, foot(l1))
    y2 = np.einsum("tij,tkj,tk->ti", Ti2, Rot2, foot(l2))
    return y1[:, :2] / y1[:, 2:], y2[:, :2] / y2[:, 2:]


def hs(Kinv, R, c, px):
    """Batch Hartley-Sturm triangulation with the kernel calling convention.

    Returns ``(X, status, corrected_px)``.
    """
    Kinv = np.ascontiguousarray(Kinv, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    px = np.ascontiguousarray(px, dtype=float)
    F = fundamental_from_poses(Kinv, R, c)
    # A zero baseline leaves F = 0: every pair is consistent and the DLT
    # below reports the missing parallax.
    flat = ~(np.abs(F).reshape(len(F), -1).max(axis=1) > 0)
    corrected = px.copy()
    live = ~flat
    if live.any():
        with np.errstate(all="ignore"):
            y1, y2 = correct_pairs(F[live], px[live, 0], px[live, 1])
        corrected[live] = np.stack([y1, y2], 1)
    bad = ~np.isfinite(corrected).all(axis=(1, 2))
    corrected[bad] = px[bad]
    X, status = kernels.dlt(Kinv, R, c, np.ascontiguousarray(corrected))
    status = np.where(bad & (status == kernels.OK), kernels.PARALLAX, status).astype(np.int8)
    X[status != kernels.OK] = np.nan
    return X, status, corrected
