import numpy as np
import pytest

from thzsim.baselines import BaselineScheme, DftTracker, SchemeKind, naive_zf, perfect_csi_bf
from thzsim.array_channel import estimate_channel


def _rand_channel(rng, n, m):
    return (rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))) / np.sqrt(2)


class TestSchemeConfig:
    def test_kind_coercion(self):
        s = BaselineScheme(kind="dft_tracking")
        assert s.kind is SchemeKind.DFT_TRACKING

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            BaselineScheme(kind="genie")


class TestPerfectCsi:
    def test_matches_alternating_solve_output_shape(self):
        rng = np.random.default_rng(0)
        H = np.stack([_rand_channel(rng, 4, 8) for _ in range(2)])
        z = 0.5 * np.ones((2, 2))
        beams, combs, trace = perfect_csi_bf(H, z, np.ones(2), 0.05, max_outer=4)
        assert beams.instantaneous.shape == (2, 8, 2)
        assert combs.combiners.shape == (2, 4, 2)
        assert beams.mixing == 1.0
        assert len(trace) >= 1


class TestDftTracker:
    def test_static_channel_fixed_point(self):
        rng = np.random.default_rng(1)
        H = np.stack([_rand_channel(rng, 4, 8)])
        tracker = DftTracker.create(8, 2, 1, window=2)
        _, _, idx0 = tracker.step(H)
        _, _, idx1 = tracker.step(H)
        _, _, idx2 = tracker.step(H)
        assert np.array_equal(idx1, idx2)

    def test_window_limits_index_motion(self):
        rng = np.random.default_rng(2)
        tracker = DftTracker.create(8, 2, 1, window=2)
        H0 = np.stack([_rand_channel(rng, 4, 8)])
        _, _, prev = tracker.step(H0)
        for _ in range(5):
            H = np.stack([_rand_channel(rng, 4, 8)])
            _, _, idx = tracker.step(H)
            delta = np.abs(idx - prev)
            delta = np.minimum(delta, 8 - delta)  # circular distance
            assert delta.max() <= 2
            prev = idx

    def test_full_window_is_global_search(self):
        rng = np.random.default_rng(3)
        H0 = np.stack([_rand_channel(rng, 4, 8)])
        H1 = np.stack([_rand_channel(rng, 4, 8)])
        small = DftTracker.create(8, 1, 1, window=1)
        full = DftTracker.create(8, 1, 1, window=8)
        small.step(H0)
        full.step(H0)
        _, _, si = small.step(H1)
        _, _, fi = full.step(H1)
        cb = small.codebook.codewords
        gain_small = np.linalg.norm(H1[0] @ cb[si[0, 0]])
        gain_full = np.linalg.norm(H1[0] @ cb[fi[0, 0]])
        assert gain_full >= gain_small - 1e-12

    def test_tracking_loss_nonnegative_under_mobility(self):
        rng = np.random.default_rng(4)
        tracker = DftTracker.create(16, 1, 1, window=2)
        H = np.stack([_rand_channel(rng, 4, 16)])
        tracker.step(H)
        cb = tracker.codebook.codewords
        losses = []
        for _ in range(200):
            H = np.stack([0.97 * H[0] + 0.25 * _rand_channel(rng, 4, 16)])
            _, _, idx = tracker.step(H)
            got = np.linalg.norm(H[0] @ cb[idx[0, 0]])
            best = max(np.linalg.norm(H[0] @ c) for c in cb)
            losses.append(best - got)
        assert min(losses) >= -1e-12
        assert np.mean(losses) >= 0.0

    def test_codebook_size_floor(self):
        with pytest.raises(ValueError):
            DftTracker.create(8, 2, 1, codebook_size=4)


class TestNaiveZf:
    def test_exact_nulling_through_estimates(self):
        rng = np.random.default_rng(5)
        K, N, M, D = 3, 4, 16, 2
        H = np.stack([_rand_channel(rng, N, M) for _ in range(K)])
        z = 0.5 * np.ones((K, D))
        beams, combs = naive_zf(H, z)
        for k in range(K):
            for i in range(K):
                if i == k:
                    continue
                leak = combs.combiners[i].conj().T @ H[i] @ beams.instantaneous[k]
                assert np.linalg.norm(leak) < 1e-10

    def test_aged_estimates_leak_through_true_channel(self):
        rng = np.random.default_rng(6)
        K, N, M, D = 2, 4, 16, 2
        H_true = np.stack([_rand_channel(rng, N, M) for _ in range(K)])
        H_est = np.stack([
            estimate_channel(H_true[k], pilot_snr_db=20.0, aging=0.95, rng=rng).estimate
            for k in range(K)
        ])
        beams, combs = naive_zf(H_est, 0.5 * np.ones((K, D)))
        leaks = []
        for k in range(K):
            for i in range(K):
                if i != k:
                    leaks.append(np.linalg.norm(
                        combs.combiners[i].conj().T @ H_true[i] @ beams.instantaneous[k]))
        assert min(leaks) > 1e-6

    def test_leakage_grows_as_aging_worsens(self):
        K, N, M, D = 2, 4, 16, 2
        totals = []
        for rho in [1.0, 0.99, 0.95, 0.9]:
            rng = np.random.default_rng(7)  # common random numbers
            H_true = np.stack([_rand_channel(rng, N, M) for _ in range(K)])
            H_est = np.stack([
                estimate_channel(H_true[k], pilot_snr_db=300.0, aging=rho, rng=rng).estimate
                for k in range(K)
            ])
            beams, combs = naive_zf(H_est, 0.5 * np.ones((K, D)))
            total = 0.0
            for k in range(K):
                for i in range(K):
                    if i != k:
                        total += np.linalg.norm(
                            combs.combiners[i].conj().T @ H_true[i] @ beams.instantaneous[k]) ** 2
            totals.append(total)
        assert all(a <= b + 1e-12 for a, b in zip(totals, totals[1:]))

    def test_dimension_precondition(self):
        rng = np.random.default_rng(8)
        H = np.stack([_rand_channel(rng, 4, 4) for _ in range(3)])
        with pytest.raises(ValueError):
            naive_zf(H, 0.5 * np.ones((3, 2)))

    def test_unit_frobenius_beams(self):
        rng = np.random.default_rng(9)
        H = np.stack([_rand_channel(rng, 4, 16) for _ in range(2)])
        beams, _ = naive_zf(H, 0.5 * np.ones((2, 2)))
        for k in range(2):
            assert abs(np.linalg.norm(beams.instantaneous[k]) - 1.0) < 1e-9
