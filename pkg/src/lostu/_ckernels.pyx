# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels; same contract as ``lostu._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, acos, cos, NAN
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

OK, PARALLAX, NO_SOURCES = 0, 1, 2

cdef double PARALLAX_TOL = 1e-12
cdef double COND_MAX = 1e12
cdef double PINV_RTOL = 1e-10


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double norm3(const double* a) noexcept nogil:
    return sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


cdef inline void skew3(const double* v, double* m) noexcept nogil:
    m[0] = 0.0;   m[1] = -v[2]; m[2] = v[1]
    m[3] = v[2];  m[4] = 0.0;   m[5] = -v[0]
    m[6] = -v[1]; m[7] = v[0];  m[8] = 0.0


cdef inline void matmul3(const double* a, const double* b, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j]


cdef inline void ray(const double* Kinv, const double* px, double* v) noexcept nogil:
    cdef int i
    for i in range(3):
        v[i] = Kinv[3 * i] * px[0] + Kinv[3 * i + 1] * px[1] + Kinv[3 * i + 2]


cdef inline void world_dir(const double* R, const double* v, double* d) noexcept nogil:
    cdef double s = 1.0 / norm3(v)
    cdef int i
    for i in range(3):
        d[i] = (R[i] * v[0] + R[3 + i] * v[1] + R[6 + i] * v[2]) * s


cdef void sym_eig3(const double* A, double* w, double* V) noexcept nogil:
    """Cyclic Jacobi eigendecomposition; eigenvalues ascending, eigenvectors in columns."""
    cdef double a[9]
    cdef int i, k, p, q, sweep, r
    cdef double off, scale, apq, theta, t, c, s, x, y
    cdef int pairs[6]
    pairs[0] = 0; pairs[1] = 1; pairs[2] = 0; pairs[3] = 2; pairs[4] = 1; pairs[5] = 2
    for i in range(9):
        a[i] = A[i]
        V[i] = 0.0
    V[0] = 1.0; V[4] = 1.0; V[8] = 1.0
    for sweep in range(50):
        off = a[1] * a[1] + a[2] * a[2] + a[5] * a[5]
        scale = a[0] * a[0] + a[4] * a[4] + a[8] * a[8]
        if off <= 1e-36 * scale or off == 0.0:
            break
        for r in range(3):
            p = pairs[2 * r]
            q = pairs[2 * r + 1]
            apq = a[3 * p + q]
            if apq == 0.0:
                continue
            theta = (a[3 * q + q] - a[3 * p + p]) / (2.0 * apq)
            if fabs(theta) > 1e150:
                t = 0.5 / theta
            else:
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
            c = 1.0 / sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                x = a[3 * k + p]
                y = a[3 * k + q]
                a[3 * k + p] = c * x - s * y
                a[3 * k + q] = s * x + c * y
            for k in range(3):
                x = a[3 * p + k]
                y = a[3 * q + k]
                a[3 * p + k] = c * x - s * y
                a[3 * q + k] = s * x + c * y
            for k in range(3):
                x = V[3 * k + p]
                y = V[3 * k + q]
                V[3 * k + p] = c * x - s * y
                V[3 * k + q] = s * x + c * y
    for i in range(3):
        w[i] = a[4 * i]
    # insertion sort of three eigenpairs
    for i in range(1, 3):
        k = i
        while k > 0 and w[k - 1] > w[k]:
            x = w[k]; w[k] = w[k - 1]; w[k - 1] = x
            for p in range(3):
                x = V[3 * p + k]; V[3 * p + k] = V[3 * p + k - 1]; V[3 * p + k - 1] = x
            k -= 1


cdef void sym_eigvals3(const double* A, double* w) noexcept nogil:
    """Closed-form eigenvalues of a symmetric 3x3 matrix, ascending."""
    cdef double p1 = A[1] * A[1] + A[2] * A[2] + A[5] * A[5]
    cdef double q = (A[0] + A[4] + A[8]) / 3.0
    cdef double d0 = A[0] - q, d1 = A[4] - q, d2 = A[8] - q
    cdef double p = sqrt((d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1) / 6.0)
    cdef double r, phi
    if p == 0.0:
        w[0] = q; w[1] = q; w[2] = q
        return
    r = (d0 * (d1 * d2 - A[5] * A[5]) - A[1] * (A[1] * d2 - A[5] * A[2])
         + A[2] * (A[1] * A[5] - d1 * A[2])) / (2.0 * p * p * p)
    if r <= -1.0:
        phi = 1.0471975511965976
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = acos(r) / 3.0
    w[2] = q + 2.0 * p * cos(phi)
    w[0] = q + 2.0 * p * cos(phi + 2.0943951023931957)
    w[1] = 3.0 * q - w[0] - w[2]


cdef int solve_spd3(const double* N, const double* b, double* X) noexcept nogil:
    """Solve N X = b for symmetric N by Cholesky; returns PARALLAX when ill-conditioned."""
    cdef double w[3]
    cdef double L[9]
    cdef double y[3]
    cdef double t
    cdef int i, j, k
    cdef double tr = N[0] + N[4] + N[8]
    cdef double det = (N[0] * (N[4] * N[8] - N[5] * N[7]) - N[1] * (N[3] * N[8] - N[5] * N[6])
                       + N[2] * (N[3] * N[7] - N[4] * N[6]))
    # lambda_min >= det / tr^2 and lambda_max <= tr settle most cases without the trig path
    if not (tr > 0.0 and det > tr * tr * tr / COND_MAX):
        sym_eigvals3(N, w)
        if not (w[0] > w[2] / COND_MAX):
            return 1
    for i in range(3):
        for j in range(i + 1):
            t = N[3 * i + j]
            for k in range(j):
                t -= L[3 * i + k] * L[3 * j + k]
            if i == j:
                if not t > 0.0:
                    return 1
                L[4 * i] = sqrt(t)
            else:
                L[3 * i + j] = t / L[4 * j]
    for i in range(3):
        t = b[i]
        for k in range(i):
            t -= L[3 * i + k] * y[k]
        y[i] = t / L[4 * i]
    for i in range(2, -1, -1):
        t = y[i]
        for k in range(i + 1, 3):
            t -= L[3 * k + i] * X[k]
        X[i] = t / L[4 * i]
    return 0


cdef int partner_ranges(Py_ssize_t n, const double* d, const double* c, double* rho) noexcept nogil:
    """Law-of-sines ranges with the two-candidate partner rule of the numpy kernel."""
    cdef double mean[3]
    cdef double tmp[3]
    cdef double base[3]
    cdef Py_ssize_t j, ja = 0, jb = 0, p
    cdef double best, dot, sa, sb, sine
    cdef int i
    mean[0] = 0.0; mean[1] = 0.0; mean[2] = 0.0
    for j in range(n):
        for i in range(3):
            mean[i] += d[3 * j + i]
    for i in range(3):
        mean[i] /= n
    best = 0.0
    for j in range(n):
        dot = d[3 * j] * mean[0] + d[3 * j + 1] * mean[1] + d[3 * j + 2] * mean[2]
        if j == 0 or dot < best:
            best = dot
            ja = j
    best = -1.0
    for j in range(n):
        cross3(&d[3 * j], &d[3 * ja], tmp)
        sa = norm3(tmp)
        if sa > best:
            best = sa
            jb = j
    for j in range(n):
        cross3(&d[3 * j], &d[3 * ja], tmp)
        sa = norm3(tmp)
        cross3(&d[3 * j], &d[3 * jb], tmp)
        sb = norm3(tmp)
        if sb > sa:
            p = jb
            sine = sb
        else:
            p = ja
            sine = sa
        if sine < PARALLAX_TOL:
            return 1
        for i in range(3):
            base[i] = c[3 * j + i] - c[3 * p + i]
        cross3(base, &d[3 * p], tmp)
        rho[j] = norm3(tmp) / sine
    return 0


cdef class _Scratch:
    cdef double* v
    cdef double* d
    cdef double* rho

    def __cinit__(self, Py_ssize_t n):
        self.v = <double*> malloc(3 * n * sizeof(double))
        self.d = <double*> malloc(3 * n * sizeof(double))
        self.rho = <double*> malloc(n * sizeof(double))
        if self.v == NULL or self.d == NULL or self.rho == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.v)
        free(self.d)
        free(self.rho)


cdef inline void prepare(Py_ssize_t n, const double* Kinv, const double* R,
                         const double* px, double* v, double* d) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        ray(&Kinv[9 * j], &px[2 * j], &v[3 * j])
        world_dir(&R[9 * j], &v[3 * j], &d[3 * j])


cdef int givens_lstsq(Py_ssize_t n, const double* v, const double* R, const double* c,
                      const double* q, double* X) noexcept nogil:
    """Least squares on rows ``q S [v x] R`` by streaming Givens QR."""
    cdef double Rf[9]
    cdef double y[3]
    cdef double vx[9]
    cdef double A[9]
    cdef double row[3]
    cdef double rhs, h, cs, sn, t, dmax, dmin
    cdef Py_ssize_t j
    cdef int r, k, l
    for k in range(9):
        Rf[k] = 0.0
    y[0] = 0.0; y[1] = 0.0; y[2] = 0.0
    for j in range(n):
        skew3(&v[3 * j], vx)
        matmul3(vx, &R[9 * j], A)
        for r in range(2):
            rhs = 0.0
            for k in range(3):
                row[k] = q[j] * A[3 * r + k]
                rhs += row[k] * c[3 * j + k]
            for k in range(3):
                if row[k] == 0.0:
                    continue
                h = sqrt(Rf[4 * k] * Rf[4 * k] + row[k] * row[k])
                cs = Rf[4 * k] / h
                sn = row[k] / h
                for l in range(k, 3):
                    t = Rf[3 * k + l]
                    Rf[3 * k + l] = cs * t + sn * row[l]
                    row[l] = -sn * t + cs * row[l]
                t = y[k]
                y[k] = cs * t + sn * rhs
                rhs = -sn * t + cs * rhs
    dmax = 0.0
    dmin = fabs(Rf[0])
    for k in range(3):
        if fabs(Rf[4 * k]) > dmax:
            dmax = fabs(Rf[4 * k])
        if fabs(Rf[4 * k]) < dmin:
            dmin = fabs(Rf[4 * k])
    if not (dmin > PARALLAX_TOL * dmax):
        return 1
    for k in range(2, -1, -1):
        t = y[k]
        for l in range(k + 1, 3):
            t -= Rf[3 * k + l] * X[l]
        X[k] = t / Rf[4 * k]
    return 0


cdef inline void nan3(double* X) noexcept nogil:
    X[0] = NAN; X[1] = NAN; X[2] = NAN


def _out(Py_ssize_t T):
    return np.empty((T, 3)), np.zeros(T, dtype=np.int8)


def ranges(double[:, :, :, ::1] Kinv, double[:, :, :, ::1] R, double[:, :, ::1] c,
           double[:, :, ::1] px):
    cdef Py_ssize_t T = Kinv.shape[0], n = Kinv.shape[1], t, j
    rho_arr = np.empty((T, n))
    status_arr = np.zeros(T, dtype=np.int8)
    cdef double[:, ::1] rho = rho_arr
    cdef signed char[::1] status = status_arr
    cdef _Scratch s = _Scratch(n)
    with nogil:
        for t in range(T):
            prepare(n, &Kinv[t, 0, 0, 0], &R[t, 0, 0, 0], &px[t, 0, 0], s.v, s.d)
            status[t] = partner_ranges(n, s.d, &c[t, 0, 0], &rho[t, 0])
            if status[t] != 0:
                for j in range(n):
                    rho[t, j] = NAN
    return rho_arr, status_arr


def midpoint(double[:, :, :, ::1] Kinv, double[:, :, :, ::1] R, double[:, :, ::1] c,
             double[:, :, ::1] px):
    cdef Py_ssize_t T = Kinv.shape[0], n = Kinv.shape[1], t, j
    X_arr, status_arr = _out(T)
    cdef double[:, ::1] X = X_arr
    cdef signed char[::1] status = status_arr
    cdef double N[9]
    cdef double b[3]
    cdef double v[3]
    cdef double d[3]
    cdef double* cj
    cdef double* Rt
    cdef double s, dc
    cdef int i, k
    with nogil:
        for t in range(T):
            for k in range(9):
                N[k] = 0.0
            b[0] = 0.0; b[1] = 0.0; b[2] = 0.0
            for j in range(n):
                ray(&Kinv[t, j, 0, 0], &px[t, j, 0], v)
                Rt = &R[t, j, 0, 0]
                # unnormalized world direction R^T v; the projector divides by |d|^2
                for i in range(3):
                    d[i] = Rt[i] * v[0] + Rt[3 + i] * v[1] + Rt[6 + i] * v[2]
                s = 1.0 / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
                cj = &c[t, j, 0]
                dc = s * (d[0] * cj[0] + d[1] * cj[1] + d[2] * cj[2])
                for i in range(3):
                    N[4 * i] += 1.0
                    b[i] += cj[i] - d[i] * dc
                    for k in range(i + 1):
                        N[3 * i + k] -= s * d[i] * d[k]
            for i in range(3):
                for k in range(i):
                    N[3 * k + i] = N[3 * i + k]
            status[t] = solve_spd3(N, b, &X[t, 0])
            if status[t] != 0:
                nan3(&X[t, 0])
    return X_arr, status_arr


def dlt(double[:, :, :, ::1] Kinv, double[:, :, :, ::1] R, double[:, :, ::1] c,
        double[:, :, ::1] px):
    cdef Py_ssize_t T = Kinv.shape[0], n = Kinv.shape[1], t, j
    X_arr, status_arr = _out(T)
    cdef double[:, ::1] X = X_arr
    cdef signed char[::1] status = status_arr
    cdef _Scratch s = _Scratch(n)
    with nogil:
        for j in range(n):
            s.rho[j] = 1.0
        for t in range(T):
            for j in range(n):
                ray(&Kinv[t, j, 0, 0], &px[t, j, 0], &s.v[3 * j])
            status[t] = givens_lstsq(n, s.v, &R[t, 0, 0, 0], &c[t, 0, 0], s.rho, &X[t, 0])
            if status[t] != 0:
                nan3(&X[t, 0])
    return X_arr, status_arr


def lost(double[:, :, :, ::1] Kinv, double[:, :, :, ::1] R, double[:, :, ::1] c,
         double[:, :, ::1] px, double[:, ::1] sigma):
    cdef Py_ssize_t T = Kinv.shape[0], n = Kinv.shape[1], t, j
    X_arr, status_arr = _out(T)
    cdef double[:, ::1] X = X_arr
    cdef signed char[::1] status = status_arr
    cdef _Scratch s = _Scratch(n)
    with nogil:
        for t in range(T):
            prepare(n, &Kinv[t, 0, 0, 0], &R[t, 0, 0, 0], &px[t, 0, 0], s.v, s.d)
            status[t] = partner_ranges(n, s.d, &c[t, 0, 0], s.rho)
            if status[t] == 0:
                for j in range(n):
                    s.rho[j] = norm3(&s.v[3 * j]) / (Kinv[t, j, 0, 0] * sigma[t, j] * s.rho[j])
                status[t] = givens_lstsq(n, s.v, &R[t, 0, 0, 0], &c[t, 0, 0], s.rho, &X[t, 0])
            if status[t] != 0:
                nan3(&X[t, 0])
    return X_arr, status_arr


cdef inline void add_outer(double* S, const double* J, const double* C, int cols) noexcept nogil:
    """S += J C J^T for J (3 x cols) and C (cols x cols), both row-major."""
    cdef double JC[9]
    cdef int i, k, l
    for i in range(3):
        for k in range(cols):
            JC[3 * i + k] = 0.0
            for l in range(cols):
                JC[3 * i + k] += J[cols * i + l] * C[cols * l + k]
    for i in range(3):
        for k in range(3):
            for l in range(cols):
                S[3 * i + k] += JC[3 * i + l] * J[cols * k + l]


cdef int lostu_track(Py_ssize_t n, const double* Kinv, const double* R, const double* c,
                     const double* px, const double* cov2d, const double* rot_cov,
                     const double* center_cov, const double* kvar, const double* hint,
                     bint diagonal, double* v, double* d, double* rho, double* X) noexcept nogil:
    cdef double N[9]
    cdef double b[3]
    cdef double S[9]
    cdef double w[3]
    cdef double wx[9]
    cdef double vx[9]
    cdef double J[9]
    cdef double J2[6]
    cdef double jk[3]
    cdef double lam[3]
    cdef double V[9]
    cdef double P[9]
    cdef double B[9]
    cdef double PB[9]
    cdef double Nj[9]
    cdef double inv[3]
    cdef double tmp[3]
    cdef double scale, top, nv
    cdef Py_ssize_t j
    cdef int i, k, l, e, st, any_nz
    cdef const double* Kj
    cdef const double* Rj
    cdef int le[5]
    cdef int me[5]
    le[0] = 0; le[1] = 0; le[2] = 0; le[3] = 1; le[4] = 1
    me[0] = 0; me[1] = 1; me[2] = 2; me[3] = 1; me[4] = 2

    prepare(n, Kinv, R, px, v, d)
    if hint == NULL:
        st = partner_ranges(n, d, c, rho)
        if st != 0:
            return st
    for k in range(9):
        N[k] = 0.0
    b[0] = 0.0; b[1] = 0.0; b[2] = 0.0

    for j in range(n):
        Kj = &Kinv[9 * j]
        Rj = &R[9 * j]
        if hint == NULL:
            nv = norm3(&v[3 * j])
            for i in range(3):
                w[i] = v[3 * j + i] / nv * rho[j]
        else:
            for i in range(3):
                tmp[i] = hint[i] - c[3 * j + i]
            for i in range(3):
                w[i] = Rj[3 * i] * tmp[0] + Rj[3 * i + 1] * tmp[1] + Rj[3 * i + 2] * tmp[2]
        skew3(w, wx)
        skew3(&v[3 * j], vx)
        for k in range(9):
            S[k] = 0.0
        # pixel: -[w x] Kinv[:, :2]
        for i in range(3):
            for k in range(2):
                J2[2 * i + k] = -(wx[3 * i] * Kj[k] + wx[3 * i + 1] * Kj[3 + k] + wx[3 * i + 2] * Kj[6 + k])
        add_outer(S, J2, &cov2d[4 * j], 2)
        # rotation: [v x][w x]
        matmul3(vx, wx, J)
        add_outer(S, J, &rot_cov[9 * j], 3)
        # center: -[v x] R
        matmul3(vx, Rj, B)
        add_outer(S, B, &center_cov[9 * j], 3)
        # calibration entries
        for e in range(5):
            if kvar[5 * j + e] == 0.0:
                continue
            for i in range(3):
                jk[i] = (wx[3 * i] * Kj[le[e]] + wx[3 * i + 1] * Kj[3 + le[e]]
                         + wx[3 * i + 2] * Kj[6 + le[e]]) * v[3 * j + me[e]]
            for i in range(3):
                for k in range(3):
                    S[3 * i + k] += kvar[5 * j + e] * jk[i] * jk[k]
        any_nz = 0
        for i in range(3):
            for k in range(i, 3):
                S[3 * i + k] = 0.5 * (S[3 * i + k] + S[3 * k + i])
                S[3 * k + i] = S[3 * i + k]
                if S[3 * i + k] != 0.0:
                    any_nz = 1
        if not any_nz:
            return 2

        for k in range(9):
            P[k] = 0.0
        if diagonal:
            top = S[0]
            if S[4] > top:
                top = S[4]
            if S[8] > top:
                top = S[8]
            for i in range(3):
                if S[4 * i] > PINV_RTOL * top:
                    P[4 * i] = 1.0 / S[4 * i]
        else:
            sym_eig3(S, lam, V)
            inv[0] = 0.0
            for i in range(1, 3):
                inv[i] = 1.0 / lam[i] if lam[i] > PINV_RTOL * lam[2] else 0.0
            for i in range(3):
                for k in range(3):
                    P[3 * i + k] = V[3 * i + 1] * inv[1] * V[3 * k + 1] + V[3 * i + 2] * inv[2] * V[3 * k + 2]

        # N_j = B^T P B with B = [v x] R
        matmul3(P, B, PB)
        for i in range(3):
            for k in range(3):
                Nj[3 * i + k] = B[i] * PB[k] + B[3 + i] * PB[3 + k] + B[6 + i] * PB[6 + k]
        for k in range(9):
            N[k] += Nj[k]
        for i in range(3):
            b[i] += Nj[3 * i] * c[3 * j] + Nj[3 * i + 1] * c[3 * j + 1] + Nj[3 * i + 2] * c[3 * j + 2]
    return solve_spd3(N, b, X)


def lostu(double[:, :, :, ::1] Kinv, double[:, :, :, ::1] R, double[:, :, ::1] c,
          double[:, :, ::1] px, double[:, :, :, ::1] cov2d, double[:, :, :, ::1] rot_cov,
          double[:, :, :, ::1] center_cov, double[:, :, ::1] kvar, hint=None, bint diagonal=False):
    cdef Py_ssize_t T = Kinv.shape[0], n = Kinv.shape[1], t
    X_arr, status_arr = _out(T)
    cdef double[:, ::1] X = X_arr
    cdef signed char[::1] status = status_arr
    cdef double[:, ::1] h
    cdef bint has_hint = hint is not None
    cdef const double* hp = NULL
    cdef _Scratch s = _Scratch(n)
    if has_hint:
        h = np.ascontiguousarray(hint, dtype=np.float64)
    with nogil:
        for t in range(T):
            if has_hint:
                hp = &h[t, 0]
            status[t] = lostu_track(n, &Kinv[t, 0, 0, 0], &R[t, 0, 0, 0], &c[t, 0, 0],
                                    &px[t, 0, 0], &cov2d[t, 0, 0, 0], &rot_cov[t, 0, 0, 0],
                                    &center_cov[t, 0, 0, 0], &kvar[t, 0, 0], hp, diagonal,
                                    s.v, s.d, s.rho, &X[t, 0])
            if status[t] != 0:
                nan3(&X[t, 0])
    return X_arr, status_arr
