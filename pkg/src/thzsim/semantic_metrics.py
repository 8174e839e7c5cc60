"""Semantic distortion, reliability and information measures.

The information measure is a weighted log-det ratio of the signal-plus-
interference-plus-noise covariance to the interference-plus-noise covariance,
evaluated per user after combining.  Interference covariances expand the
random statistics-driven beam part into its centered second moments

    E[V z z^T V^H] -> sw^2 E[Vt z z^T Vt^H] + sw^2 tr(z z^T) E[Vt Vt^H]
                      + (1 - sw)^2 Vhat z z^T Vhat^H

where sw in [0, 1] weights the statistics-driven fluctuation (sw = 0 means a
purely deterministic beamformer) and the moments are those of the zero-mean
codeword deviation supplied by the dynamics layer.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_PSD_SLACK = 1e-10


@dataclass
class CausalState:
    """Semantic vector and its instantaneous/static decomposition."""

    vector: np.ndarray
    instantaneous: np.ndarray
    static: np.ndarray
    mixing: float  # beta: weight on the instantaneous part

    @classmethod
    def mix(cls, instantaneous, static, beta):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("mixing weight must lie in [0, 1]")
        inst = np.asarray(instantaneous, dtype=np.float64)
        stat = np.asarray(static, dtype=np.float64)
        return cls(vector=beta * inst + (1.0 - beta) * stat,
                   instantaneous=inst, static=stat, mixing=beta)


@dataclass(frozen=True)
class SemanticThresholds:
    distortion_threshold: float  # delta, squared-distance units
    outage_tolerance: float  # epsilon

    def __post_init__(self):
        if self.distortion_threshold <= 0:
            raise ValueError("distortion threshold must be positive")
        if not 0.0 < self.outage_tolerance < 1.0:
            raise ValueError("outage tolerance must lie in (0, 1)")


@dataclass
class CovariancePair:
    """R: signal+interference+noise; R_bar: interference+noise (both DxD)."""

    R: np.ndarray
    R_bar: np.ndarray


@dataclass
class SemanticScorer:
    """Weights for the information measure.

    similarity(a, b) = exp(-||a-b||^2 / (2 delta)) so identical states score 1
    and the kernel decays on the semantic-space scale; source_information maps
    a state to its nonnegative richness (default: constant 1).
    """

    delta: float
    source_information: Callable[[np.ndarray], float] = field(default=lambda z: 1.0)
    n_candidates: int = 16
    spread: float = 0.3

    def similarity(self, a, b) -> float:
        diff = np.asarray(a, float) - np.asarray(b, float)
        return float(np.exp(-float(diff @ diff) / (2.0 * self.delta)))

    def sample_candidates(self, center, rng: np.random.Generator) -> np.ndarray:
        center = np.asarray(center, dtype=np.float64)
        return center + self.spread * rng.standard_normal((self.n_candidates, center.shape[0]))


def distortion(z, z_dec) -> float:
    """Squared Euclidean distance between sent and reconstructed states."""
    z = np.asarray(z, dtype=np.float64)
    z_dec = np.asarray(z_dec, dtype=np.float64)
    if z.shape != z_dec.shape:
        raise ValueError("state vectors must have equal length")
    diff = z - z_dec
    return float(diff @ diff)


def semantic_reliability(samples, delta: float) -> float:
    """Empirical fraction of (sent, decoded) pairs with distortion <= delta."""
    if len(samples) == 0:
        raise ValueError("need at least one (sent, decoded) sample")
    hits = sum(1 for z, zd in samples if distortion(z, zd) <= delta)
    return hits / len(samples)


def chance_constraint_satisfied(mean_distortion, std_distortion, delta, epsilon) -> bool:
    """One-sided Cantelli surrogate for p(E < delta) >= 1 - epsilon."""
    if mean_distortion < 0 or std_distortion < 0:
        raise ValueError("distortion moments must be nonnegative")
    kappa = np.sqrt((1.0 - epsilon) / epsilon)
    return bool(mean_distortion + kappa * std_distortion <= delta)


def _hermitize(A):
    return 0.5 * (A + A.conj().T)


def _psd_guard(A, what: str):
    A = _hermitize(A)
    scale = max(float(np.linalg.norm(A)), 1.0e-300)
    w = np.linalg.eigvalsh(A)
    if w.min() < -_PSD_SLACK * max(scale, 1.0):
        raise FloatingPointError(f"{what} lost positive semidefiniteness (min eig {w.min():.3e})")
    if w.min() < 0.0:
        vals, vecs = np.linalg.eigh(A)
        A = (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T
    return A


@dataclass
class UserLink:
    """Per-user quantities entering another user's covariance."""

    beamformer: np.ndarray  # deterministic part, (M, D)
    state: np.ndarray  # z_i, (D,)
    power: float = 1.0
    static_weight: float = 0.0  # sw_i
    col_covs: np.ndarray | None = None  # (D, M, M) centered per-column moments
    m2: np.ndarray | None = None  # (M, M) total centered second moment


def link_contribution(P, link: UserLink) -> np.ndarray:
    """Covariance contribution of one user through effective channel P."""
    z = np.asarray(link.state, dtype=np.float64)
    sw = link.static_weight
    a = P @ (link.beamformer @ z)
    C = (1.0 - sw) ** 2 * np.outer(a, a.conj())
    if sw > 0.0:
        if link.col_covs is None or link.m2 is None:
            raise ValueError("static fluctuation weight > 0 requires codeword moments")
        acc = np.zeros_like(C)
        for d in range(z.shape[0]):
            acc += (z[d] ** 2) * (P @ link.col_covs[d] @ P.conj().T)
        acc += float(z @ z) * (P @ link.m2 @ P.conj().T)
        C = C + sw**2 * acc
    return link.power * C


def interference_covariances(k, channel, links, noise_var, combiner=None) -> CovariancePair:
    """Interference-plus-noise and total covariances at user k.

    channel is user k's estimate (N x M); combiner (N x D) projects to the
    semantic dimension, or None for the antenna-level (N x N) covariances used
    by the transmit-side operand construction.
    """
    H = np.asarray(channel)
    if combiner is None:
        P = H
        noise = noise_var * np.eye(H.shape[0], dtype=np.complex128)
    else:
        W = np.asarray(combiner)
        P = W.conj().T @ H
        noise = noise_var * (W.conj().T @ W)
    R_bar = noise.astype(np.complex128)
    own = None
    for i, link in enumerate(links):
        C = link_contribution(P, link)
        if i == k:
            own = C
        else:
            R_bar = R_bar + C
    if own is None:
        raise ValueError("user index k outside the link list")
    R_bar = _psd_guard(R_bar, "interference covariance")
    R = _psd_guard(R_bar + own, "total covariance")
    return CovariancePair(R=R, R_bar=R_bar)


def logdet_ratio(cov: CovariancePair) -> float:
    """log det(R_bar^{-1} R) in nats; nonnegative whenever R >= R_bar."""
    s1, ld1 = np.linalg.slogdet(cov.R)
    s2, ld2 = np.linalg.slogdet(cov.R_bar)
    if s1 <= 0 or s2 <= 0:
        raise FloatingPointError("covariance matrices must be positive definite")
    val = ld1 - ld2
    if val < -1e-9:
        raise FloatingPointError(f"log-det ratio came out negative ({val:.3e})")
    return max(val, 0.0)


def candidate_weight_sum(candidates, received, eff_map, cov: CovariancePair,
                         scorer: SemanticScorer, decoded_candidates=None) -> float:
    """Total weight sum_z p(y|z) S_s(z) mean_zd Z(zd, z).

    ``candidates`` are plausible transmitted states; the Gaussian likelihood
    p(y|z) uses the interference-plus-noise covariance and is normalized
    across the set.  The similarity factor averages the kernel against the
    decoded-state candidates (defaults to the same set), so semantics that
    failed to arrive earn no weight.
    """
    cands = np.asarray(candidates, dtype=np.float64)
    dec = cands if decoded_candidates is None else np.asarray(decoded_candidates, float)
    resid = received[None, :] - cands @ eff_map.T  # (n, D) complex
    Rb_inv = np.linalg.inv(cov.R_bar)
    quad = np.real(np.einsum("nd,de,ne->n", resid.conj(), Rb_inv, resid))
    quad -= quad.min()
    like = np.exp(-quad)
    like = like / like.sum()
    src = np.array([scorer.source_information(c) for c in cands])
    diffs = dec[:, None, :] - cands[None, :, :]
    sim = np.exp(-np.sum(diffs**2, axis=2) / (2.0 * scorer.delta))
    sim_mean = sim.mean(axis=0)
    return float(np.sum(like * src * sim_mean))


def semantic_information(cov: CovariancePair, weight_sum: float) -> float:
    """Received semantic information: weight-summed log-det ratio (nats)."""
    if weight_sum < 0:
        raise ValueError("weight sum must be nonnegative")
    return logdet_ratio(cov) * weight_sum


# ---------------------------------------------------------------------------
# decoding and outage statistics
# ---------------------------------------------------------------------------


@dataclass
class Decoder:
    """LMMSE reconstruction of the real semantic vector from the combined rx."""

    eff_map: np.ndarray  # T = W^H H sqrt(p) V, (D, D) complex
    noise_cov: np.ndarray  # interference+noise covariance, (D, D) complex
    prior_mean: np.ndarray  # (D,) real
    prior_cov: np.ndarray  # (D, D) real

    def gain(self) -> np.ndarray:
        T = self.eff_map
        Cz = self.prior_cov.astype(np.complex128)
        S = T @ Cz @ T.conj().T + self.noise_cov
        return Cz @ T.conj().T @ np.linalg.inv(S)

    def decode(self, received) -> np.ndarray:
        F = self.gain()
        est = self.prior_mean + np.real(F @ (received - self.eff_map @ self.prior_mean))
        return est

    def distortion_moments(self, z) -> tuple[float, float]:
        """Mean and std of ||z - decode(y)||^2 over the noise distribution.

        With b = (I - Re(F T))(z - prior) and C = Re(F Sigma F^H)/2 the error
        is a noncentral quadratic form: mean ||b||^2 + tr C, variance
        2 tr C^2 + 4 b^T C b.
        """
        F = self.gain()
        b = (np.eye(len(z)) - np.real(F @ self.eff_map)) @ (np.asarray(z, float) - self.prior_mean)
        C = 0.5 * np.real(F @ self.noise_cov @ F.conj().T)
        mean = float(b @ b + np.trace(C))
        var = float(2.0 * np.trace(C @ C) + 4.0 * b @ C @ b)
        return mean, np.sqrt(max(var, 0.0))
