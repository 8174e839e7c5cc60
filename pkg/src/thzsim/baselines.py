"""Reference beamforming schemes: perfect-CSI solve, DFT beam tracking and
naive zero-forcing through (possibly stale) channel estimates."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from thzsim.causal_dynamics import BeamCodebook
from thzsim.gev_beamformer import (
    BeamformerSet,
    CombinerSet,
    SolverProblem,
    alternating_solve,
    fix_phase,
)


class SchemeKind(str, Enum):
    PROPOSED = "proposed"
    PERFECT_CSI = "perfect_csi"
    DFT_TRACKING = "dft_tracking"
    NAIVE_ZF = "naive_zf"


@dataclass
class BaselineScheme:
    kind: SchemeKind
    codebook_size: int | None = None
    tracking_window: int = 2

    def __post_init__(self):
        self.kind = SchemeKind(self.kind)


def perfect_csi_bf(true_channels, states, weights, noise_var, powers=None, **solver_opts):
    """Proposed solver run on the exact channels with a purely
    instantaneous beam decomposition."""
    problem = SolverProblem(
        channels=true_channels,
        states=states,
        noise_var=noise_var,
        weights=weights,
        powers=powers,
        mixing=1.0,
    )
    beam_set, comb_set, trace = alternating_solve(problem, **solver_opts)
    return beam_set, comb_set, trace


@dataclass
class DftTracker:
    """Windowed beam selection over a DFT codebook, one index per beam column.

    Column d may move at most ``window`` codewords per step (modulo the
    codebook) from its previous index; the selected codeword maximizes the
    estimated beamforming gain ||H c||.
    """

    codebook: BeamCodebook
    window: int = 2
    indices: np.ndarray | None = None  # (K, D) previous assignment

    @classmethod
    def create(cls, m_antennas, dim, num_users, window=2, codebook_size=None):
        cb = BeamCodebook.dft(m_antennas, codebook_size)
        if cb.size < m_antennas:
            raise ValueError("codebook size must be at least the antenna count")
        tracker = cls(codebook=cb, window=window)
        tracker.indices = None
        tracker._dim = dim
        tracker._num_users = num_users
        return tracker

    def _gains(self, channel):
        return np.linalg.norm(channel @ self.codebook.codewords.T, axis=0)

    def step(self, channels_est):
        """Select beams for every user; first call searches globally."""
        channels_est = np.asarray(channels_est)
        K = channels_est.shape[0]
        D = self._dim
        C = self.codebook.size
        if self.indices is None:
            self.indices = np.zeros((K, D), dtype=int)
            for k in range(K):
                g = self._gains(channels_est[k])
                order = np.argsort(g)[::-1]
                self.indices[k] = order[:D]
        else:
            for k in range(K):
                g = self._gains(channels_est[k])
                used = set()
                for d in range(D):
                    prev = self.indices[k, d]
                    cand = [(prev + off) % C for off in range(-self.window, self.window + 1)]
                    cand = [c for c in cand if c not in used]
                    best = max(cand, key=lambda c: g[c])
                    self.indices[k, d] = best
                    used.add(best)
        V = np.zeros((K, channels_est.shape[2], D), dtype=np.complex128)
        W = np.zeros((K, channels_est.shape[1], D), dtype=np.complex128)
        for k in range(K):
            for d in range(D):
                V[k, :, d] = self.codebook.codewords[self.indices[k, d]]
            V[k] /= np.linalg.norm(V[k])
            # matched-filter combiner per beam column
            eff = channels_est[k] @ V[k]
            for d in range(D):
                col = eff[:, d]
                nrm = np.linalg.norm(col)
                W[k, :, d] = fix_phase(col / nrm) if nrm > 0 else 0.0
            Q, _ = np.linalg.qr(W[k])
            W[k] = Q
        beams = BeamformerSet(instantaneous=V, mixing=1.0)
        return beams, CombinerSet(combiners=W), self.indices.copy()


def naive_zf(channels_est, states, powers=None, dim=None):
    """Block zero-forcing through the supplied channel estimates.

    Combiners are the dominant left singular vectors per user; each user's
    beamformer lives in the null space of the other users' effective
    (combined) channel estimates, pointed along its own matched directions.
    Residual leakage through the *estimates* is zero to numerical precision;
    leakage through the true channels is whatever estimation error causes.
    """
    channels_est = np.asarray(channels_est, dtype=np.complex128)
    K, N, M = channels_est.shape
    D = states.shape[1] if dim is None else dim
    if K * D > M:
        raise ValueError("block zero-forcing needs K*D <= M")
    W = np.zeros((K, N, D), dtype=np.complex128)
    for k in range(K):
        U, _, _ = np.linalg.svd(channels_est[k], full_matrices=False)
        for d in range(D):
            W[k, :, d] = fix_phase(U[:, d])
    V = np.zeros((K, M, D), dtype=np.complex128)
    for k in range(K):
        rows = []
        for i in range(K):
            if i == k:
                continue
            rows.append(W[i].conj().T @ channels_est[i])
        if rows:
            stack = np.vstack(rows)  # ((K-1) D, M)
            _, s, Vh = np.linalg.svd(stack)
            rank = int(np.sum(s > max(s[0], 1e-300) * 1e-12)) if s.size else 0
            if rank >= M:
                # no exact null space left: fall back to least-leakage directions
                null = Vh[max(M - D, 0):].conj().T
            else:
                null = Vh[rank:].conj().T  # (M, M - rank)
        else:
            null = np.eye(M, dtype=np.complex128)
        target = channels_est[k].conj().T @ W[k]  # matched directions (M, D)
        coords = null.conj().T @ target  # stay inside the null space
        Uc, sc, _ = np.linalg.svd(coords, full_matrices=True)
        take = min(D, null.shape[1])
        basis = null @ Uc[:, :take]
        for d in range(take):
            V[k, :, d] = fix_phase(basis[:, d])
        nrm = np.linalg.norm(V[k])
        if nrm > 0:
            V[k] /= nrm
    return BeamformerSet(instantaneous=V, mixing=1.0, powers=powers), CombinerSet(combiners=W)
