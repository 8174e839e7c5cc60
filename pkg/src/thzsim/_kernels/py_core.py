"""Numpy reference implementation of the hot kernels.

All functions operate on the lifted max-min feasibility problem: per user k a
real symmetric PSD state ``Z_k`` (the lift of the semantic vector z_k z_k^T),
coupled through small complex covariance assemblies

    contrib(i->k) = T[k,i] Z_i T[k,i]^H + sum_d Z_i[d,d] Phi[k,i,d]
                    + tr(Z_i) PhiBar[k,i]
    Rbar_k = base_k + sum_{i != k} contrib(i->k)
    R_k    = Rbar_k + contrib(k->k)
    margin_k = w_k (logdet R_k - logdet Rbar_k) - alpha

The ascent maximizes the softmin of the margins with monotone backtracking;
projection keeps every Z_k PSD with a trace cap.  The Cython module mirrors
this file operation for operation.
"""

import numpy as np

__all__ = [
    "pap_sum",
    "psd_project_trace",
    "margins_at",
    "pga_ascent",
    "rank1_polish",
]


def pap_sum(P, A, coeffs):
    """Accumulate sum_j coeffs[j] * P @ A[j] @ P^H for small matrices.

    P: (D, M) complex, A: (n, M, M) complex, coeffs: (n,) float.
    Returns a (D, D) complex matrix.
    """
    P = np.asarray(P)
    A = np.asarray(A)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    out = np.zeros((P.shape[0], P.shape[0]), dtype=np.complex128)
    for j in range(A.shape[0]):
        out += coeffs[j] * (P @ A[j] @ P.conj().T)
    return out


def _eigh_sym(Z):
    # LAPACK eigh on the symmetrized matrix; tiny D so cost is negligible.
    return np.linalg.eigh(0.5 * (Z + Z.T))


def psd_project_trace(Z, cap_sq):
    """Project a real symmetric matrix onto {X >= 0, tr X <= cap_sq}.

    Unitary invariance reduces this to projecting the eigenvalues onto the
    corner of the simplex {lam >= 0, sum lam <= cap_sq}.
    """
    lam, U = _eigh_sym(np.asarray(Z, dtype=np.float64))
    lam = np.maximum(lam, 0.0)
    total = lam.sum()
    if total > cap_sq:
        # uniform shift theta with clamping: sum max(lam - theta, 0) = cap_sq
        srt = np.sort(lam)[::-1]
        csum = np.cumsum(srt)
        theta = 0.0
        for r in range(len(srt), 0, -1):
            theta = (csum[r - 1] - cap_sq) / r
            if r == 1 or srt[r - 1] > theta:
                break
        lam = np.maximum(lam - theta, 0.0)
    return (U * lam) @ U.T


def _chol_logdet(R):
    L = np.linalg.cholesky(R)
    return 2.0 * np.sum(np.log(np.real(np.diag(L))))


def _assemble(Tdet, Phi, PhiBar, base, Z, k):
    """(Rbar_k, R_k) for user k given lifted states Z (K, D, D)."""
    K = base.shape[0]
    Rbar = base[k].copy()
    own = None
    for i in range(K):
        c = Tdet[k, i] @ Z[i] @ Tdet[k, i].conj().T
        for d in range(Z.shape[1]):
            c = c + Z[i, d, d] * Phi[k, i, d]
        c = c + np.trace(Z[i]) * PhiBar[k, i]
        if i == k:
            own = c
        else:
            Rbar = Rbar + c
    return Rbar, Rbar + own


def margins_at(Tdet, Phi, PhiBar, base, w, Z, alpha):
    """Per-user margins w_k(logdet R_k - logdet Rbar_k) - alpha."""
    K = base.shape[0]
    m = np.empty(K)
    for k in range(K):
        Rbar, R = _assemble(Tdet, Phi, PhiBar, base, Z, k)
        m[k] = w[k] * (_chol_logdet(R) - _chol_logdet(Rbar)) - alpha
    return m


def _softmin(m, tau):
    mmin = m.min()
    e = np.exp(-(m - mmin) / tau)
    s = e.sum()
    phi = mmin - tau * np.log(s)
    return phi, e / s


def _grad_lifted(Tdet, Phi, PhiBar, base, w, Z, omega):
    """Softmin-weighted ascent direction for the lifted states."""
    K, D = base.shape[0], Z.shape[1]
    G = np.zeros((K, D, D))
    for k in range(K):
        Rbar, R = _assemble(Tdet, Phi, PhiBar, base, Z, k)
        Rinv = np.linalg.inv(R)
        Dk = Rinv - np.linalg.inv(Rbar)
        for i in range(K):
            core = Rinv if i == k else Dk
            M = Tdet[k, i].conj().T @ core @ Tdet[k, i]
            g = np.real(M)
            for d in range(D):
                g[d, d] += np.real(np.trace(core @ Phi[k, i, d]))
            g += np.real(np.trace(core @ PhiBar[k, i])) * np.eye(D)
            G[i] += (omega[k] * w[k]) * 0.5 * (g + g.T)
    return G


def pga_ascent(Tdet, Phi, PhiBar, base, w, alpha, cap_sq, Z0, n_iter, tau, feas_tol):
    """Projected-gradient ascent on the softmin margin over lifted states.

    Returns (Z, margins, iterations_used).  Exits early once the true min
    margin clears feas_tol.  Backtracking keeps the softmin objective
    nondecreasing, so the ascent is monotone and fully deterministic.
    """
    Z = np.array(Z0, dtype=np.float64, copy=True)
    m = margins_at(Tdet, Phi, PhiBar, base, w, Z, alpha)
    if m.min() >= feas_tol:
        return Z, m, 0
    phi, omega = _softmin(m, tau)
    eta = 0.0
    it = 0
    for it in range(1, n_iter + 1):
        G = _grad_lifted(Tdet, Phi, PhiBar, base, w, Z, omega)
        gnorm = max(np.sqrt((G * G).sum(axis=(1, 2))).max(), 1e-300)
        if eta <= 0.0:
            eta = cap_sq / gnorm
        accepted = False
        for _ in range(40):
            Zp = np.empty_like(Z)
            for i in range(Z.shape[0]):
                Zp[i] = psd_project_trace(Z[i] + eta * G[i], cap_sq)
            mp = margins_at(Tdet, Phi, PhiBar, base, w, Zp, alpha)
            phip, omegap = _softmin(mp, tau)
            if phip > phi:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        Z, m, phi, omega = Zp, mp, phip, omegap
        eta *= 1.3
        if m.min() >= feas_tol:
            break
    return Z, m, it


def rank1_polish(Tdet, Phi, PhiBar, base, w, alpha, cap, z0, n_iter, tau, feas_tol):
    """Gradient ascent directly on the rank-one states z_k, ||z_k|| <= cap.

    Same objective as pga_ascent restricted to the rank-one manifold; used to
    close the relaxation gap after eigenvector extraction.
    """
    z = np.array(z0, dtype=np.float64, copy=True)
    K, D = z.shape

    def lift(zz):
        return np.einsum("kd,ke->kde", zz, zz)

    m = margins_at(Tdet, Phi, PhiBar, base, w, lift(z), alpha)
    if m.min() >= feas_tol:
        return z, m, 0
    phi, omega = _softmin(m, tau)
    eta = 0.0
    it = 0
    for it in range(1, n_iter + 1):
        G = _grad_lifted(Tdet, Phi, PhiBar, base, w, lift(z), omega)
        g = 2.0 * np.einsum("kde,ke->kd", G, z)
        gnorm = max(np.sqrt((g * g).sum(axis=1)).max(), 1e-300)
        if eta <= 0.0:
            eta = cap / gnorm
        accepted = False
        for _ in range(40):
            zp = z + eta * g
            for i in range(K):
                nrm = np.sqrt((zp[i] * zp[i]).sum())
                if nrm > cap:
                    zp[i] *= cap / nrm
            mp = margins_at(Tdet, Phi, PhiBar, base, w, lift(zp), alpha)
            phip, omegap = _softmin(mp, tau)
            if phip > phi:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        z, m, phi, omega = zp, mp, phip, omegap
        eta *= 1.3
        if m.min() >= feas_tol:
            break
    return z, m, it
