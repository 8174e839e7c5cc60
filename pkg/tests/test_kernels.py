import numpy as np
import pytest

from thzsim._kernels import get_impl, kernel_backend

try:
    CY = get_impl("cython")
    HAVE_CY = True
except ImportError:
    CY = None
    HAVE_CY = False

PY = get_impl("python")

needs_cython = pytest.mark.skipif(not HAVE_CY, reason="compiled kernel not built")


def _random_instance(rng, K=3, D=2, with_moments=True):
    Tdet = rng.standard_normal((K, K, D, D)) + 1j * rng.standard_normal((K, K, D, D))
    Phi = np.zeros((K, K, D, D, D), dtype=np.complex128)
    PhiBar = np.zeros((K, K, D, D), dtype=np.complex128)
    if with_moments:
        for k in range(K):
            for i in range(K):
                for d in range(D):
                    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
                    Phi[k, i, d] = 0.05 * (A @ A.conj().T)
                B = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
                PhiBar[k, i] = 0.05 * (B @ B.conj().T)
    base = np.tile(np.eye(D, dtype=np.complex128), (K, 1, 1))
    w = np.abs(rng.standard_normal(K)) + 0.5
    return Tdet, Phi, PhiBar, base, w


class TestPurePython:
    def test_pap_sum_matches_einsum(self):
        rng = np.random.default_rng(0)
        P = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
        A = rng.standard_normal((4, 6, 6)) + 1j * rng.standard_normal((4, 6, 6))
        c = rng.standard_normal(4)
        ref = np.einsum("j,ab,jbc,dc->ad", c, P, A, P.conj())
        assert np.allclose(PY.pap_sum(P, A, c), ref, atol=1e-12)

    def test_projection_idempotent_and_feasible(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            Z = rng.standard_normal((3, 3))
            cap = rng.uniform(0.1, 2.0)
            P1 = PY.psd_project_trace(Z, cap)
            vals = np.linalg.eigvalsh(0.5 * (P1 + P1.T))
            assert vals.min() >= -1e-12
            assert np.trace(P1) <= cap + 1e-10
            P2 = PY.psd_project_trace(P1, cap)
            assert np.allclose(P1, P2, atol=1e-10)

    def test_projection_is_euclidean_nearest(self):
        # compare against a dense search over clamp-shift candidates
        rng = np.random.default_rng(2)
        for _ in range(20):
            Z = rng.standard_normal((2, 2))
            Z = 0.5 * (Z + Z.T)
            cap = 0.8
            P = PY.psd_project_trace(Z, cap)
            best = np.inf
            lam, U = np.linalg.eigh(Z)
            for t1 in np.linspace(0, 2, 81):
                for t2 in np.linspace(0, 2, 81):
                    if t1 + t2 > cap:
                        continue
                    cand = (U * [t1, t2]) @ U.T
                    best = min(best, np.linalg.norm(cand - Z))
            assert np.linalg.norm(P - Z) <= best + 1e-3

    def test_margins_against_direct_formula(self):
        rng = np.random.default_rng(3)
        Tdet, Phi, PhiBar, base, w = _random_instance(rng)
        K, D = 3, 2
        z = rng.standard_normal((K, D)) * 0.5
        Z = np.einsum("kd,ke->kde", z, z)
        got = PY.margins_at(Tdet, Phi, PhiBar, base, w, Z, 0.3)
        for k in range(K):
            Rbar = base[k].copy()
            own = None
            for i in range(K):
                C = Tdet[k, i] @ Z[i] @ Tdet[k, i].conj().T
                for d in range(D):
                    C = C + Z[i, d, d] * Phi[k, i, d]
                C = C + np.trace(Z[i]) * PhiBar[k, i]
                if i == k:
                    own = C
                else:
                    Rbar += C
            s1, l1 = np.linalg.slogdet(Rbar + own)
            s2, l2 = np.linalg.slogdet(Rbar)
            assert abs(got[k] - (w[k] * (l1 - l2) - 0.3)) < 1e-10

    def test_ascent_monotone_softmin(self):
        rng = np.random.default_rng(4)
        Tdet, Phi, PhiBar, base, w = _random_instance(rng)
        Z0 = np.tile(0.05 * np.eye(2), (3, 1, 1))
        m0 = PY.margins_at(Tdet, Phi, PhiBar, base, w, Z0, 1.0)
        Z, m, it = PY.pga_ascent(Tdet, Phi, PhiBar, base, w, 1.0, 1.0, Z0, 100,
                                 0.05, 1e30)
        assert m.min() >= m0.min() - 1e-9


@needs_cython
class TestBackendEquivalence:
    def test_margins_bitwise_close(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            r = np.random.default_rng(seed)
            Tdet, Phi, PhiBar, base, w = _random_instance(r)
            z = r.standard_normal((3, 2)) * 0.6
            Z = np.einsum("kd,ke->kde", z, z)
            a = PY.margins_at(Tdet, Phi, PhiBar, base, w, Z, 0.7)
            b = CY.margins_at(Tdet, Phi, PhiBar, base, w, Z, 0.7)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_projection_equivalent(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            Z = rng.standard_normal((4, 4))
            cap = rng.uniform(0.2, 1.5)
            a = PY.psd_project_trace(Z, cap)
            b = CY.psd_project_trace(Z, cap)
            assert np.allclose(a, b, atol=1e-10)

    def test_pap_sum_equivalent(self):
        rng = np.random.default_rng(7)
        P = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
        A = rng.standard_normal((5, 8, 8)) + 1j * rng.standard_normal((5, 8, 8))
        c = rng.standard_normal(5)
        assert np.allclose(PY.pap_sum(P, A, c), CY.pap_sum(P, A, c), atol=1e-12)

    def test_short_ascent_trajectories_match(self):
        rng = np.random.default_rng(8)
        Tdet, Phi, PhiBar, base, w = _random_instance(rng)
        Z0 = np.tile(0.1 * np.eye(2), (3, 1, 1))
        Za, ma, ia = PY.pga_ascent(Tdet, Phi, PhiBar, base, w, 0.9, 1.0, Z0, 30,
                                   0.05, 1e30)
        Zb, mb, ib = CY.pga_ascent(Tdet, Phi, PhiBar, base, w, 0.9, 1.0, Z0, 30,
                                   0.05, 1e30)
        assert ia == ib
        assert np.allclose(ma, mb, rtol=1e-8, atol=1e-10)
        assert np.allclose(Za, Zb, rtol=1e-8, atol=1e-10)

    def test_short_polish_trajectories_match(self):
        rng = np.random.default_rng(9)
        Tdet, Phi, PhiBar, base, w = _random_instance(rng)
        z0 = 0.4 * np.ones((3, 2))
        za, ma, ia = PY.rank1_polish(Tdet, Phi, PhiBar, base, w, 0.9, 1.0, z0, 30,
                                     0.05, 1e30)
        zb, mb, ib = CY.rank1_polish(Tdet, Phi, PhiBar, base, w, 0.9, 1.0, z0, 30,
                                     0.05, 1e30)
        assert ia == ib
        assert np.allclose(za, zb, rtol=1e-8, atol=1e-10)
        assert np.allclose(ma, mb, rtol=1e-8, atol=1e-10)

    def test_active_backend_reported(self):
        assert kernel_backend() in ("python", "cython")
