# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of py_core: hot loops of the lifted max-min feasibility
ascent with small-matrix complex Cholesky and real Jacobi eigensolvers."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt

cnp.import_array()

DEF MAXD = 16


# ---------------------------------------------------------------------------
# small-matrix helpers
# ---------------------------------------------------------------------------


cdef int _chol(double complex[:, ::1] A, double complex[:, ::1] L, int n) noexcept nogil:
    cdef int i, j, k
    cdef double s
    cdef double complex c
    for j in range(n):
        s = A[j, j].real
        for k in range(j):
            s -= L[j, k].real * L[j, k].real + L[j, k].imag * L[j, k].imag
        if s <= 0.0:
            return 1
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            c = A[i, j]
            for k in range(j):
                c = c - L[i, k] * L[j, k].conjugate()
            L[i, j] = c / L[j, j].real
        for i in range(j):
            L[i, j] = 0.0
    return 0


cdef double _logdet_from_chol(double complex[:, ::1] L, int n) noexcept nogil:
    cdef int j
    cdef double acc = 0.0
    for j in range(n):
        acc += log(L[j, j].real)
    return 2.0 * acc


cdef void _chol_inverse(double complex[:, ::1] L, double complex[:, ::1] out, int n) noexcept nogil:
    # out = (L L^H)^{-1} via forward/backward solves against identity columns
    cdef int i, j, col
    cdef double complex y[MAXD]
    cdef double complex x[MAXD]
    cdef double complex s
    for col in range(n):
        for i in range(n):
            s = 1.0 + 0.0j if i == col else 0.0 + 0.0j
            for j in range(i):
                s = s - L[i, j] * y[j]
            y[i] = s / L[i, i].real
        for i in range(n - 1, -1, -1):
            s = y[i]
            for j in range(i + 1, n):
                s = s - L[j, i].conjugate() * x[j]
            x[i] = s / L[i, i].real
        for i in range(n):
            out[i, col] = x[i]


cdef void _jacobi(double[:, ::1] A, double[:, ::1] V, double[::1] lam, int n) noexcept nogil:
    cdef int i, j, p, q, sweep
    cdef double off, theta, t, c, s, app, aqq, apq, aip, aiq, vip, viq
    for i in range(n):
        for j in range(n):
            V[i, j] = 1.0 if i == j else 0.0
    for sweep in range(100):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += A[p, q] * A[p, q]
        if off < 1e-28:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = A[p, q]
                if fabs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                app = A[p, p]
                aqq = A[q, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for i in range(n):
                    if i != p and i != q:
                        aip = A[i, p]
                        aiq = A[i, q]
                        A[i, p] = c * aip - s * aiq
                        A[p, i] = A[i, p]
                        A[i, q] = c * aiq + s * aip
                        A[q, i] = A[i, q]
                for i in range(n):
                    vip = V[i, p]
                    viq = V[i, q]
                    V[i, p] = c * vip - s * viq
                    V[i, q] = c * viq + s * vip
    for i in range(n):
        lam[i] = A[i, i]


cdef void _project_psd_trace(double[:, ::1] Z, double cap_sq, int n,
                             double[:, ::1] work, double[:, ::1] vecs,
                             double[::1] lam) noexcept nogil:
    cdef int i, j, k, r
    cdef double total, theta, v
    for i in range(n):
        for j in range(n):
            work[i, j] = 0.5 * (Z[i, j] + Z[j, i])
    _jacobi(work, vecs, lam, n)
    total = 0.0
    for i in range(n):
        if lam[i] < 0.0:
            lam[i] = 0.0
        total += lam[i]
    if total > cap_sq:
        # descending insertion sort into work[0] row as scratch
        for i in range(n):
            work[0, i] = lam[i]
        for i in range(1, n):
            v = work[0, i]
            j = i - 1
            while j >= 0 and work[0, j] < v:
                work[0, j + 1] = work[0, j]
                j -= 1
            work[0, j + 1] = v
        total = 0.0
        theta = 0.0
        for r in range(n):
            total += work[0, r]
            theta = (total - cap_sq) / (r + 1)
            if r + 1 == n or work[0, r + 1] <= theta:
                break
        for i in range(n):
            lam[i] = lam[i] - theta
            if lam[i] < 0.0:
                lam[i] = 0.0
    for i in range(n):
        for j in range(n):
            v = 0.0
            for k in range(n):
                v += vecs[i, k] * lam[k] * vecs[j, k]
            Z[i, j] = v


cdef void _assemble_pair(double complex[:, :, :, ::1] Tdet,
                         double complex[:, :, :, :, ::1] Phi,
                         double complex[:, :, :, ::1] PhiBar,
                         double complex[:, :, ::1] base,
                         double[:, :, ::1] Z,
                         int k, int K, int D,
                         double complex[:, ::1] Rbar,
                         double complex[:, ::1] R,
                         double complex[:, ::1] tz) noexcept nogil:
    cdef int i, a, b, c, d
    cdef double tr
    cdef double complex acc
    for a in range(D):
        for b in range(D):
            Rbar[a, b] = base[k, a, b]
            R[a, b] = 0.0
    for i in range(K):
        for a in range(D):
            for b in range(D):
                acc = 0.0
                for c in range(D):
                    acc = acc + Tdet[k, i, a, c] * Z[i, c, b]
                tz[a, b] = acc
        tr = 0.0
        for c in range(D):
            tr += Z[i, c, c]
        if i == k:
            for a in range(D):
                for b in range(D):
                    acc = 0.0
                    for c in range(D):
                        acc = acc + tz[a, c] * Tdet[k, i, b, c].conjugate()
                    for d in range(D):
                        acc = acc + Z[i, d, d] * Phi[k, i, d, a, b]
                    acc = acc + tr * PhiBar[k, i, a, b]
                    R[a, b] = acc
        else:
            for a in range(D):
                for b in range(D):
                    acc = 0.0
                    for c in range(D):
                        acc = acc + tz[a, c] * Tdet[k, i, b, c].conjugate()
                    for d in range(D):
                        acc = acc + Z[i, d, d] * Phi[k, i, d, a, b]
                    acc = acc + tr * PhiBar[k, i, a, b]
                    Rbar[a, b] = Rbar[a, b] + acc
    for a in range(D):
        for b in range(D):
            R[a, b] = R[a, b] + Rbar[a, b]


cdef int _margins(double complex[:, :, :, ::1] Tdet,
                  double complex[:, :, :, :, ::1] Phi,
                  double complex[:, :, :, ::1] PhiBar,
                  double complex[:, :, ::1] base,
                  double[::1] w,
                  double[:, :, ::1] Z,
                  double alpha,
                  int K, int D,
                  double[::1] out,
                  double complex[:, ::1] Rbar,
                  double complex[:, ::1] R,
                  double complex[:, ::1] tz,
                  double complex[:, ::1] L) noexcept nogil:
    cdef int k
    cdef double ld_bar, ld
    for k in range(K):
        _assemble_pair(Tdet, Phi, PhiBar, base, Z, k, K, D, Rbar, R, tz)
        if _chol(Rbar, L, D):
            return 1
        ld_bar = _logdet_from_chol(L, D)
        if _chol(R, L, D):
            return 1
        ld = _logdet_from_chol(L, D)
        out[k] = w[k] * (ld - ld_bar) - alpha
    return 0


cdef double _softmin(double[::1] m, double tau, double[::1] omega, int K) noexcept nogil:
    cdef int k
    cdef double mmin = m[0], s = 0.0
    for k in range(1, K):
        if m[k] < mmin:
            mmin = m[k]
    for k in range(K):
        omega[k] = exp(-(m[k] - mmin) / tau)
        s += omega[k]
    for k in range(K):
        omega[k] /= s
    return mmin - tau * log(s)


cdef double _min_of(double[::1] m, int K) noexcept nogil:
    cdef int k
    cdef double v = m[0]
    for k in range(1, K):
        if m[k] < v:
            v = m[k]
    return v


cdef int _grad(double complex[:, :, :, ::1] Tdet,
               double complex[:, :, :, :, ::1] Phi,
               double complex[:, :, :, ::1] PhiBar,
               double complex[:, :, ::1] base,
               double[::1] w,
               double[:, :, ::1] Z,
               double[::1] omega,
               int K, int D,
               double[:, :, ::1] G,
               double complex[:, ::1] Rbar,
               double complex[:, ::1] R,
               double complex[:, ::1] tz,
               double complex[:, ::1] L,
               double complex[:, ::1] Rinv,
               double complex[:, ::1] Dk,
               double complex[:, ::1] core,
               double complex[:, ::1] tc) noexcept nogil:
    cdef int k, i, a, b, c, d
    cdef double tr_core_phi, gab
    cdef double complex acc
    for i in range(K):
        for a in range(D):
            for b in range(D):
                G[i, a, b] = 0.0
    for k in range(K):
        _assemble_pair(Tdet, Phi, PhiBar, base, Z, k, K, D, Rbar, R, tz)
        if _chol(R, L, D):
            return 1
        _chol_inverse(L, Rinv, D)
        if _chol(Rbar, L, D):
            return 1
        _chol_inverse(L, Dk, D)
        for a in range(D):
            for b in range(D):
                Dk[a, b] = Rinv[a, b] - Dk[a, b]
        for i in range(K):
            if i == k:
                for a in range(D):
                    for b in range(D):
                        core[a, b] = Rinv[a, b]
            else:
                for a in range(D):
                    for b in range(D):
                        core[a, b] = Dk[a, b]
            for a in range(D):
                for b in range(D):
                    acc = 0.0
                    for c in range(D):
                        acc = acc + Tdet[k, i, c, a].conjugate() * core[c, b]
                    tc[a, b] = acc
            for a in range(D):
                for b in range(D):
                    acc = 0.0
                    for c in range(D):
                        acc = acc + tc[a, c] * Tdet[k, i, c, b]
                    tz[a, b] = acc
            for a in range(D):
                for b in range(D):
                    gab = 0.5 * (tz[a, b].real + tz[b, a].real)
                    G[i, a, b] += omega[k] * w[k] * gab
            for d in range(D):
                tr_core_phi = 0.0
                for a in range(D):
                    for b in range(D):
                        tr_core_phi += (core[a, b] * Phi[k, i, d, b, a]).real
                G[i, d, d] += omega[k] * w[k] * tr_core_phi
            tr_core_phi = 0.0
            for a in range(D):
                for b in range(D):
                    tr_core_phi += (core[a, b] * PhiBar[k, i, b, a]).real
            for d in range(D):
                G[i, d, d] += omega[k] * w[k] * tr_core_phi
    return 0


# ---------------------------------------------------------------------------
# public API (mirrors py_core)
# ---------------------------------------------------------------------------


def pap_sum(P, A, coeffs):
    P = np.ascontiguousarray(P, dtype=np.complex128)
    A = np.ascontiguousarray(A, dtype=np.complex128)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef double complex[:, ::1] Pv = P
    cdef double complex[:, :, ::1] Av = A
    cdef double[::1] cv = coeffs
    cdef int Dn = P.shape[0]
    cdef int M = P.shape[1]
    cdef int n = A.shape[0]
    out = np.zeros((Dn, Dn), dtype=np.complex128)
    tmp = np.zeros((Dn, M), dtype=np.complex128)
    cdef double complex[:, ::1] ov = out
    cdef double complex[:, ::1] tv = tmp
    cdef int j, a, b, c
    cdef double complex acc
    with nogil:
        for j in range(n):
            for a in range(Dn):
                for b in range(M):
                    acc = 0.0
                    for c in range(M):
                        acc = acc + Pv[a, c] * Av[j, c, b]
                    tv[a, b] = acc
            for a in range(Dn):
                for b in range(Dn):
                    acc = 0.0
                    for c in range(M):
                        acc = acc + tv[a, c] * Pv[b, c].conjugate()
                    ov[a, b] = ov[a, b] + cv[j] * acc
    return out


def psd_project_trace(Z, cap_sq):
    Zc = np.array(Z, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] Zv = Zc
    cdef int n = Zc.shape[0]
    if n > MAXD:
        raise ValueError("dimension exceeds kernel limit")
    work = np.zeros((n, n))
    vecs = np.zeros((n, n))
    lam = np.zeros(n)
    cdef double[:, ::1] wv = work
    cdef double[:, ::1] vv = vecs
    cdef double[::1] lv = lam
    cdef double cap = float(cap_sq)
    with nogil:
        _project_psd_trace(Zv, cap, n, wv, vv, lv)
    return Zc


def margins_at(Tdet, Phi, PhiBar, base, w, Z, alpha):
    Tdet = np.ascontiguousarray(Tdet, dtype=np.complex128)
    Phi = np.ascontiguousarray(Phi, dtype=np.complex128)
    PhiBar = np.ascontiguousarray(PhiBar, dtype=np.complex128)
    base = np.ascontiguousarray(base, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef int K = base.shape[0]
    cdef int D = base.shape[1]
    if D > MAXD:
        raise ValueError("dimension exceeds kernel limit")
    out = np.zeros(K)
    Rbar = np.zeros((D, D), dtype=np.complex128)
    R = np.zeros((D, D), dtype=np.complex128)
    tz = np.zeros((D, D), dtype=np.complex128)
    L = np.zeros((D, D), dtype=np.complex128)
    cdef double complex[:, :, :, ::1] Tv = Tdet
    cdef double complex[:, :, :, :, ::1] Pv = Phi
    cdef double complex[:, :, :, ::1] Bv = PhiBar
    cdef double complex[:, :, ::1] bv = base
    cdef double[::1] wv = w
    cdef double[:, :, ::1] Zv = Z
    cdef double[::1] ov = out
    cdef double complex[:, ::1] r1 = Rbar
    cdef double complex[:, ::1] r2 = R
    cdef double complex[:, ::1] r3 = tz
    cdef double complex[:, ::1] r4 = L
    cdef double a_ = float(alpha)
    cdef int bad
    with nogil:
        bad = _margins(Tv, Pv, Bv, bv, wv, Zv, a_, K, D, ov, r1, r2, r3, r4)
    if bad:
        raise np.linalg.LinAlgError("covariance lost positive definiteness")
    return out


def pga_ascent(Tdet, Phi, PhiBar, base, w, alpha, cap_sq, Z0, n_iter, tau, feas_tol):
    Tdet = np.ascontiguousarray(Tdet, dtype=np.complex128)
    Phi = np.ascontiguousarray(Phi, dtype=np.complex128)
    PhiBar = np.ascontiguousarray(PhiBar, dtype=np.complex128)
    base = np.ascontiguousarray(base, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef int K = base.shape[0]
    cdef int D = base.shape[1]
    if D > MAXD:
        raise ValueError("dimension exceeds kernel limit")
    Z = np.array(Z0, dtype=np.float64, order="C", copy=True)
    m = np.zeros(K)
    omega = np.zeros(K)
    mp = np.zeros(K)
    omegap = np.zeros(K)
    G = np.zeros((K, D, D))
    Zp = np.zeros((K, D, D))
    Rbar = np.zeros((D, D), dtype=np.complex128)
    R = np.zeros((D, D), dtype=np.complex128)
    tz = np.zeros((D, D), dtype=np.complex128)
    L = np.zeros((D, D), dtype=np.complex128)
    Rinv = np.zeros((D, D), dtype=np.complex128)
    Dk = np.zeros((D, D), dtype=np.complex128)
    core = np.zeros((D, D), dtype=np.complex128)
    tc = np.zeros((D, D), dtype=np.complex128)
    work = np.zeros((D, D))
    vecs = np.zeros((D, D))
    lam = np.zeros(D)

    cdef double complex[:, :, :, ::1] Tv = Tdet
    cdef double complex[:, :, :, :, ::1] Pv = Phi
    cdef double complex[:, :, :, ::1] Bv = PhiBar
    cdef double complex[:, :, ::1] bv = base
    cdef double[::1] wv = w
    cdef double[:, :, ::1] Zv = Z
    cdef double[:, :, ::1] Zpv = Zp
    cdef double[:, :, ::1] Gv = G
    cdef double[::1] mv = m
    cdef double[::1] ov = omega
    cdef double[::1] mpv = mp
    cdef double[::1] opv = omegap
    cdef double complex[:, ::1] r1 = Rbar
    cdef double complex[:, ::1] r2 = R
    cdef double complex[:, ::1] r3 = tz
    cdef double complex[:, ::1] r4 = L
    cdef double complex[:, ::1] r5 = Rinv
    cdef double complex[:, ::1] r6 = Dk
    cdef double complex[:, ::1] r7 = core
    cdef double complex[:, ::1] r8 = tc
    cdef double[:, ::1] wkv = work
    cdef double[:, ::1] vv = vecs
    cdef double[::1] lv = lam

    cdef double a_ = float(alpha)
    cdef double cap = float(cap_sq)
    cdef double tau_ = float(tau)
    cdef double ftol = float(feas_tol)
    cdef int iters = int(n_iter)
    cdef int it = 0, k, i, a, b, bt, accepted, bad = 0
    cdef double phi, phip, eta = 0.0, gnorm, gn

    with nogil:
        bad = _margins(Tv, Pv, Bv, bv, wv, Zv, a_, K, D, mv, r1, r2, r3, r4)
        if not bad:
            if _min_of(mv, K) >= ftol:
                it = -1
            else:
                phi = _softmin(mv, tau_, ov, K)
    if bad:
        raise np.linalg.LinAlgError("covariance lost positive definiteness")
    if it == -1:
        return Z, m, 0
    for it in range(1, iters + 1):
        with nogil:
            bad = _grad(Tv, Pv, Bv, bv, wv, Zv, ov, K, D, Gv,
                        r1, r2, r3, r4, r5, r6, r7, r8)
        if bad:
            raise np.linalg.LinAlgError("covariance lost positive definiteness")
        with nogil:
            gnorm = 1e-300
            for i in range(K):
                gn = 0.0
                for a in range(D):
                    for b in range(D):
                        gn += Gv[i, a, b] * Gv[i, a, b]
                gn = sqrt(gn)
                if gn > gnorm:
                    gnorm = gn
            if eta <= 0.0:
                eta = cap / gnorm
            accepted = 0
            for bt in range(40):
                for i in range(K):
                    for a in range(D):
                        for b in range(D):
                            Zpv[i, a, b] = Zv[i, a, b] + eta * Gv[i, a, b]
                    _project_psd_trace(Zpv[i], cap, D, wkv, vv, lv)
                bad = _margins(Tv, Pv, Bv, bv, wv, Zpv, a_, K, D, mpv, r1, r2, r3, r4)
                if bad:
                    break
                phip = _softmin(mpv, tau_, opv, K)
                if phip > phi:
                    accepted = 1
                    break
                eta *= 0.5
        if bad:
            raise np.linalg.LinAlgError("covariance lost positive definiteness")
        if not accepted:
            break
        with nogil:
            for i in range(K):
                for a in range(D):
                    for b in range(D):
                        Zv[i, a, b] = Zpv[i, a, b]
            for k in range(K):
                mv[k] = mpv[k]
                ov[k] = opv[k]
        phi = phip
        eta *= 1.3
        if m.min() >= ftol:
            break
    return Z, m, it


def rank1_polish(Tdet, Phi, PhiBar, base, w, alpha, cap, z0, n_iter, tau, feas_tol):
    Tdet = np.ascontiguousarray(Tdet, dtype=np.complex128)
    Phi = np.ascontiguousarray(Phi, dtype=np.complex128)
    PhiBar = np.ascontiguousarray(PhiBar, dtype=np.complex128)
    base = np.ascontiguousarray(base, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cdef int K = base.shape[0]
    cdef int D = base.shape[1]
    if D > MAXD:
        raise ValueError("dimension exceeds kernel limit")
    z = np.array(z0, dtype=np.float64, order="C", copy=True)
    zp = np.zeros((K, D))
    Z = np.zeros((K, D, D))
    Zp = np.zeros((K, D, D))
    m = np.zeros(K)
    omega = np.zeros(K)
    mp = np.zeros(K)
    omegap = np.zeros(K)
    G = np.zeros((K, D, D))
    g = np.zeros((K, D))
    Rbar = np.zeros((D, D), dtype=np.complex128)
    R = np.zeros((D, D), dtype=np.complex128)
    tz = np.zeros((D, D), dtype=np.complex128)
    L = np.zeros((D, D), dtype=np.complex128)
    Rinv = np.zeros((D, D), dtype=np.complex128)
    Dk = np.zeros((D, D), dtype=np.complex128)
    core = np.zeros((D, D), dtype=np.complex128)
    tc = np.zeros((D, D), dtype=np.complex128)

    cdef double complex[:, :, :, ::1] Tv = Tdet
    cdef double complex[:, :, :, :, ::1] Pv = Phi
    cdef double complex[:, :, :, ::1] Bv = PhiBar
    cdef double complex[:, :, ::1] bv = base
    cdef double[::1] wv = w
    cdef double[:, ::1] zv = z
    cdef double[:, ::1] zpv = zp
    cdef double[:, :, ::1] Zv = Z
    cdef double[:, :, ::1] Zpv = Zp
    cdef double[:, :, ::1] Gv = G
    cdef double[:, ::1] gv = g
    cdef double[::1] mv = m
    cdef double[::1] ov = omega
    cdef double[::1] mpv = mp
    cdef double[::1] opv = omegap
    cdef double complex[:, ::1] r1 = Rbar
    cdef double complex[:, ::1] r2 = R
    cdef double complex[:, ::1] r3 = tz
    cdef double complex[:, ::1] r4 = L
    cdef double complex[:, ::1] r5 = Rinv
    cdef double complex[:, ::1] r6 = Dk
    cdef double complex[:, ::1] r7 = core
    cdef double complex[:, ::1] r8 = tc

    cdef double a_ = float(alpha)
    cdef double cap_ = float(cap)
    cdef double tau_ = float(tau)
    cdef double ftol = float(feas_tol)
    cdef int iters = int(n_iter)
    cdef int it = 0, i, k, a, b, bt, accepted, bad = 0
    cdef double phi, phip, eta = 0.0, gnorm, gn, nrm

    with nogil:
        for i in range(K):
            for a in range(D):
                for b in range(D):
                    Zv[i, a, b] = zv[i, a] * zv[i, b]
        bad = _margins(Tv, Pv, Bv, bv, wv, Zv, a_, K, D, mv, r1, r2, r3, r4)
        if not bad:
            if _min_of(mv, K) >= ftol:
                it = -1
            else:
                phi = _softmin(mv, tau_, ov, K)
    if bad:
        raise np.linalg.LinAlgError("covariance lost positive definiteness")
    if it == -1:
        return z, m, 0
    for it in range(1, iters + 1):
        with nogil:
            bad = _grad(Tv, Pv, Bv, bv, wv, Zv, ov, K, D, Gv,
                        r1, r2, r3, r4, r5, r6, r7, r8)
        if bad:
            raise np.linalg.LinAlgError("covariance lost positive definiteness")
        with nogil:
            for i in range(K):
                for a in range(D):
                    gn = 0.0
                    for b in range(D):
                        gn += Gv[i, a, b] * zv[i, b]
                    gv[i, a] = 2.0 * gn
            gnorm = 1e-300
            for i in range(K):
                gn = 0.0
                for a in range(D):
                    gn += gv[i, a] * gv[i, a]
                gn = sqrt(gn)
                if gn > gnorm:
                    gnorm = gn
            if eta <= 0.0:
                eta = cap_ / gnorm
            accepted = 0
            for bt in range(40):
                for i in range(K):
                    nrm = 0.0
                    for a in range(D):
                        zpv[i, a] = zv[i, a] + eta * gv[i, a]
                        nrm += zpv[i, a] * zpv[i, a]
                    nrm = sqrt(nrm)
                    if nrm > cap_:
                        for a in range(D):
                            zpv[i, a] *= cap_ / nrm
                for i in range(K):
                    for a in range(D):
                        for b in range(D):
                            Zpv[i, a, b] = zpv[i, a] * zpv[i, b]
                bad = _margins(Tv, Pv, Bv, bv, wv, Zpv, a_, K, D, mpv, r1, r2, r3, r4)
                if bad:
                    break
                phip = _softmin(mpv, tau_, opv, K)
                if phip > phi:
                    accepted = 1
                    break
                eta *= 0.5
        if bad:
            raise np.linalg.LinAlgError("covariance lost positive definiteness")
        if not accepted:
            break
        with nogil:
            for i in range(K):
                for a in range(D):
                    zv[i, a] = zpv[i, a]
                    for b in range(D):
                        Zv[i, a, b] = Zpv[i, a, b]
            for k in range(K):
                mv[k] = mpv[k]
                ov[k] = opv[k]
        phi = phip
        eta *= 1.3
        if m.min() >= ftol:
            break
    return z, m, it
