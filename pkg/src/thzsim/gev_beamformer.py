"""Instantaneous beamformer/combiner updates by generalized eigendecomposition.

Each outer iteration freezes the current covariances (the linearization
point), assembles per-user signal and leakage operands, and replaces every
transmit beamformer with the dominant generalized eigenvectors of the signal
pencil against the semantics-weighted leakage pencil; combiners follow on the
receive side.  Per linearization point the subspace (Ky Fan) surrogate is
maximized exactly, which makes the recorded surrogate trace nondecreasing.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from thzsim.semantic_metrics import (
    CovariancePair,
    UserLink,
    interference_covariances,
    logdet_ratio,
)

HERM_TOL = 1e-8
RIDGE_SCALE = 1e-9


class DivergenceError(RuntimeError):
    """Surrogate objective decreased; carries the iteration trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class GevOperands:
    """Signal/leakage pencils for one user.

    The vec-space pencils (S_t, I_t) are z z^T Kronecker signal/leakage
    sandwiches; their top eigenvectors factor exactly as z kron u with u an
    eigenvector of the reduced M x M pencil, which is what the update solves
    (the full pencil's rank-one state block makes its complement ridge-only
    and numerically near-singular).
    """

    S_t: np.ndarray  # (M D, M D)
    I_t: np.ndarray  # (M D, M D), ridge included
    S_r: np.ndarray  # (N, N)
    I_r: np.ndarray  # (N, N), noise included
    state: np.ndarray  # z_k
    weight: float  # own weight sum
    core_signal: np.ndarray | None = None  # (M, M), weighted signal sandwich
    core_leak: np.ndarray | None = None  # (M, M), weighted leakage sum
    ridge: float = 0.0


@dataclass
class BeamformerSet:
    instantaneous: np.ndarray  # (K, M, D)
    static: np.ndarray | None = None  # (K, M, D)
    mixing: float = 1.0  # weight on the instantaneous part
    powers: np.ndarray | None = None

    def mixed(self, k: int) -> np.ndarray:
        V = self.instantaneous[k]
        if self.static is not None and self.mixing < 1.0:
            V = self.mixing * V + (1.0 - self.mixing) * self.static[k]
        nrm = np.linalg.norm(V)
        return V / nrm if nrm > 0 else V

    def all_mixed(self) -> np.ndarray:
        return np.stack([self.mixed(k) for k in range(self.instantaneous.shape[0])])


@dataclass
class CombinerSet:
    combiners: np.ndarray  # (K, N, D), orthonormal columns


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate so the first significant component is real positive."""
    mags = np.abs(v)
    idx = int(np.argmax(mags > 1e-8 * mags.max())) if mags.max() > 0 else 0
    pivot = v[idx]
    if abs(pivot) == 0:
        return v
    return v * (abs(pivot) / pivot)


def _check_hermitian(A, name):
    dev = np.linalg.norm(A - A.conj().T)
    if dev > HERM_TOL * max(np.linalg.norm(A), 1e-300):
        raise ValueError(f"{name} is not Hermitian (relative deviation {dev:.2e})")
    return 0.5 * (A + A.conj().T)


def generalized_eig(A: np.ndarray, B: np.ndarray, top_d: int):
    """Top eigenpairs of A v = mu B v, eigenvalues descending.

    B gets a ridge RIDGE_SCALE * tr(B)/dim before factorization and must be
    positive definite afterwards; returned vectors are B-orthonormal with a
    deterministic phase convention, and every pair satisfies the residual
    bound ||A v - mu B v|| <= 1e-8 ||A||.
    """
    A = _check_hermitian(np.asarray(A, dtype=np.complex128), "A")
    B = _check_hermitian(np.asarray(B, dtype=np.complex128), "B")
    dim = A.shape[0]
    ridge = RIDGE_SCALE * np.real(np.trace(B)) / dim
    B_reg = B + ridge * np.eye(dim)
    try:
        np.linalg.cholesky(B_reg)
    except np.linalg.LinAlgError:
        raise ValueError("B indefinite after ridge regularization") from None
    vals, vecs = scipy.linalg.eigh(A, B_reg)
    order = np.argsort(vals)[::-1][:top_d]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        vecs[:, j] = fix_phase(vecs[:, j])
    norm_a = np.linalg.norm(A)
    norm_b = np.linalg.norm(B_reg)
    for j in range(vecs.shape[1]):
        # backward-error residual; reduces to 1e-8 ||A|| when |mu| ||B|| <= ||A||
        resid = np.linalg.norm(A @ vecs[:, j] - vals[j] * (B_reg @ vecs[:, j]))
        resid /= max(np.linalg.norm(vecs[:, j]), 1e-300)
        scale = max(norm_a + abs(vals[j]) * norm_b, 1e-300)
        if resid > 1e-8 * scale:
            raise FloatingPointError(f"generalized eig residual {resid:.2e} exceeds bound")
    return vals, vecs


@dataclass
class SolverProblem:
    """Frozen per-step inputs for the alternating beamformer solve."""

    channels: np.ndarray  # (K, N, M) channel estimates
    states: np.ndarray  # (K, D)
    noise_var: float
    weights: np.ndarray  # (K,) semantic weight sums
    powers: np.ndarray | None = None  # (K,)
    static_beams: np.ndarray | None = None  # (K, M, D)
    static_weight: float = 0.0  # sw, weight on the statistics-driven part
    col_covs: list | None = None  # per user (D, M, M)
    m2: list | None = None  # per user (M, M)
    mixing: float = 1.0  # lambda, weight on the instantaneous beam part
    state_spread: float = 0.25  # decoded-candidate std lifting the rx pencil
    diag_load: float = 0.0  # extra noise floor (channel-estimate-error scatter)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.complex128)
        self.states = np.asarray(self.states, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.powers is None:
            self.powers = np.ones(self.channels.shape[0])
        self.powers = np.asarray(self.powers, dtype=np.float64)

    @property
    def num_users(self):
        return self.channels.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    def links(self, beams: np.ndarray) -> list[UserLink]:
        out = []
        for i in range(self.num_users):
            out.append(
                UserLink(
                    beamformer=beams[i],
                    state=self.states[i],
                    power=self.powers[i],
                    static_weight=self.static_weight,
                    col_covs=None if self.col_covs is None else self.col_covs[i],
                    m2=None if self.m2 is None else self.m2[i],
                )
            )
        return out


def antenna_covariances(problem: SolverProblem, beams: np.ndarray) -> list[CovariancePair]:
    links = problem.links(beams)
    noise = problem.noise_var + problem.diag_load
    return [
        interference_covariances(k, problem.channels[k], links, noise, combiner=None)
        for k in range(problem.num_users)
    ]


def build_operands(k, problem: SolverProblem, beams, combiners, covs) -> GevOperands:
    """Assemble the four pencils for user k at the current linearization.

    S_t whitens the signal by the interference-plus-noise covariance (the
    own-signal-inclusive variant self-penalizes the current direction and
    oscillates at high SNR instead of settling on the matched filter).  The
    leakage pencil sums the interferers' weighted (R_ibar^{-1} - R_i^{-1})
    sandwiches, which are PSD by the Woodbury ordering and asserted so.
    """
    z = problem.states[k]
    H_k = problem.channels[k]
    zz = np.outer(z, z)
    Rbar_inv = np.linalg.inv(covs[k].R_bar)
    core_s = H_k.conj().T @ Rbar_inv @ H_k
    S_t = problem.weights[k] * np.kron(zz, core_s)

    md = S_t.shape[0]
    core_leak = np.zeros_like(core_s)
    for i in range(problem.num_users):
        if i == k:
            continue
        # factored Woodbury: with own = U U^H,
        #   Rbar^{-1} - R^{-1} = X (I + U^H X)^{-1} X^H,  X = Rbar^{-1} U,
        # evaluated as a Gram product so the PSD ordering holds by
        # construction (differencing two ill-conditioned inverses does not)
        own = covs[i].R - covs[i].R_bar
        lam, vecs = np.linalg.eigh(0.5 * (own + own.conj().T))
        keep = lam > max(lam.max(), 0.0) * 1e-14
        U = vecs[:, keep] * np.sqrt(lam[keep])
        if U.shape[1] == 0:
            continue
        X = np.linalg.solve(covs[i].R_bar, U)
        G = np.eye(U.shape[1]) + U.conj().T @ X
        L = np.linalg.cholesky(0.5 * (G + G.conj().T))
        Y = np.linalg.solve(L, X.conj().T).conj().T  # diff = Y Y^H
        diff = Y @ Y.conj().T
        wmin = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)).min()
        if wmin < -1e-8 * max(np.linalg.norm(diff), 1e-300):
            raise FloatingPointError("leakage sandwich lost PSD ordering")
        H_i = problem.channels[i]
        core_leak += problem.weights[i] * (H_i.conj().T @ diff @ H_i)
    leak = np.kron(zz, core_leak)
    # conditioning floor: the leakage sandwich has rank <= (K-1) N, so an
    # overly small ridge makes the whitened pencil amplify fp noise
    ridge = 1e-7 * max(np.real(np.trace(S_t + leak)) / md, 0.0) + 1e-30
    I_t = leak + ridge * np.eye(md)

    # receive pencil: candidate-averaged state covariance zz^T + spread^2 I
    # (a purely rank-one pencil leaves the remaining combiner columns blind
    # to the decoded-state spread)
    eff_own = H_k @ beams[k]
    a_own = eff_own @ z
    S_r = np.outer(a_own, a_own.conj())
    S_r = S_r + problem.state_spread**2 * (eff_own @ eff_own.conj().T)
    n = H_k.shape[0]
    I_r = problem.noise_var * np.eye(n, dtype=np.complex128)
    for i in range(problem.num_users):
        if i == k:
            continue
        a = H_k @ beams[i] @ problem.states[i] * np.sqrt(problem.powers[i])
        I_r += np.outer(a, a.conj())
    I_r += problem.diag_load * np.eye(n, dtype=np.complex128)
    return GevOperands(
        S_t=S_t, I_t=I_t, S_r=S_r, I_r=I_r, state=z.copy(), weight=problem.weights[k],
        core_signal=problem.weights[k] * core_s, core_leak=core_leak, ridge=ridge,
    )


def surrogate_objective(ops: GevOperands, V: np.ndarray) -> float:
    """Generalized Rayleigh ratio of vec(V) on the transmit pencil."""
    vec = np.asarray(V, dtype=np.complex128).reshape(-1, order="F")
    dim = ops.I_t.shape[0]
    ridge = RIDGE_SCALE * np.real(np.trace(ops.I_t)) / dim
    num = np.real(vec.conj() @ ops.S_t @ vec)
    den = np.real(vec.conj() @ (ops.I_t + ridge * np.eye(dim)) @ vec)
    return float(num / den)


def _b_orthonormal_frame(cols, B):
    F = np.asarray(cols, dtype=np.complex128)
    gram = F.conj().T @ B @ F
    gram = 0.5 * (gram + gram.conj().T) + 1e-15 * np.trace(B).real / B.shape[0] * np.eye(F.shape[1])
    L = np.linalg.cholesky(gram)
    return F @ np.linalg.inv(L).conj().T


def subspace_surrogate(ops: GevOperands, V: np.ndarray) -> float:
    """Ky Fan subspace value of the vec-frame {z kron V[:, d]} on the pencil."""
    z = ops.state
    cols = np.stack([np.kron(z.astype(np.complex128), V[:, d]) for d in range(V.shape[1])], axis=1)
    dim = ops.I_t.shape[0]
    ridge = RIDGE_SCALE * np.real(np.trace(ops.I_t)) / dim
    F = _b_orthonormal_frame(cols, ops.I_t + ridge * np.eye(dim))
    return float(np.real(np.trace(F.conj().T @ ops.S_t @ F)))


def update_beamformer(k, ops: GevOperands, dim: int) -> np.ndarray:
    """Dominant-D generalized eigenvectors reshaped to the M x D beamformer.

    The vec-space top eigenvectors are exactly z kron u_j (column-major unvec
    u_j z^T), with u_j solving the reduced pencil
    (||z||^2 core_signal, ||z||^2 core_leak + ridge I); the transmit
    directions u_j become the beamformer columns.
    """
    m = ops.core_signal.shape[0]
    z = ops.state
    znorm2 = max(float(z @ z), 1e-30)
    A = znorm2 * ops.core_signal
    B = znorm2 * ops.core_leak + ops.ridge * np.eye(m)
    _, vecs = generalized_eig(A, B, top_d=dim)
    cols = []
    for j in range(vecs.shape[1]):
        u = vecs[:, j]
        cols.append(fix_phase(u / max(np.linalg.norm(u), 1e-300)))
    V = np.stack(cols, axis=1)
    return V / np.linalg.norm(V)


def update_combiner(k, ops: GevOperands, dim: int) -> np.ndarray:
    """Receive-side dominant eigenvectors, QR-orthonormalized columns."""
    _, vecs = generalized_eig(ops.S_r, ops.I_r, top_d=dim)
    Q, _ = np.linalg.qr(vecs)
    for j in range(Q.shape[1]):
        Q[:, j] = fix_phase(Q[:, j])
    return Q


def _init_svd(problem: SolverProblem):
    K, N, M = problem.channels.shape
    D = problem.dim
    V = np.zeros((K, M, D), dtype=np.complex128)
    W = np.zeros((K, N, D), dtype=np.complex128)
    for k in range(K):
        U, _, Vh = np.linalg.svd(problem.channels[k], full_matrices=False)
        for d in range(D):
            V[k, :, d] = fix_phase(Vh[d].conj())
            W[k, :, d] = fix_phase(U[:, d])
        V[k] /= np.linalg.norm(V[k])
    return V, W


def solve_objective(problem: SolverProblem, beam_set: BeamformerSet, combiners) -> float:
    """Weighted-sum believed information of a (beams, combiners) candidate."""
    return _objective(problem, beam_set, combiners)


def _objective(problem: SolverProblem, beam_set: BeamformerSet, combiners) -> float:
    links = problem.links(beam_set.instantaneous)
    noise = problem.noise_var + problem.diag_load
    total = 0.0
    for k in range(problem.num_users):
        cov = interference_covariances(
            k, problem.channels[k], links, noise, combiner=combiners[k]
        )
        total += problem.weights[k] * logdet_ratio(cov)
    return total


def alternating_solve(problem: SolverProblem, max_outer: int = 50, tol: float = 1e-5,
                      init=None):
    """Alternate beamformer and combiner updates until the objective settles.

    Returns (BeamformerSet, CombinerSet, trace).  Each trace row records the
    transmit/receive subspace surrogates before and after the update at that
    iteration's linearization point plus the exact weighted objective; the
    surrogate must not decrease within a linearization point.
    """
    K, N, M = problem.channels.shape
    D = problem.dim
    # normalize the channel scale so the pencils are well conditioned and the
    # solve is invariant to a common power rescaling of (H, sigma^2)
    s0 = np.sqrt(np.mean(np.abs(problem.channels) ** 2))
    if s0 <= 0:
        raise ValueError("all-zero channel set")
    problem = SolverProblem(
        channels=problem.channels / s0,
        states=problem.states,
        noise_var=problem.noise_var / (s0 * s0),
        weights=problem.weights,
        powers=problem.powers,
        static_beams=problem.static_beams,
        static_weight=problem.static_weight,
        col_covs=problem.col_covs,
        m2=problem.m2,
        mixing=problem.mixing,
        state_spread=problem.state_spread,
        diag_load=problem.diag_load / (s0 * s0),
    )
    if init is None:
        V, W = _init_svd(problem)
    else:
        V, W = (x.copy() for x in init)
    beam_set = BeamformerSet(
        instantaneous=V,
        static=problem.static_beams,
        mixing=problem.mixing,
        powers=problem.powers,
    )
    trace = []
    prev_obj = None
    best = (-np.inf, V.copy(), W.copy())
    for it in range(max_outer):
        # covariances follow the moment expansion (instantaneous beams +
        # centered static moments); receive pencils see the mixed beams
        covs = antenna_covariances(problem, V)
        mixed = beam_set.all_mixed()
        ops = [build_operands(k, problem, mixed, W, covs) for k in range(K)]
        t_before = sum(subspace_surrogate(ops[k], V[k]) for k in range(K))
        for k in range(K):
            V[k] = update_beamformer(k, ops[k], D)
        t_after = sum(subspace_surrogate(ops[k], V[k]) for k in range(K))
        scale = max(abs(t_before), abs(t_after), 1.0)
        if t_after < t_before - 1e-6 * scale:
            raise DivergenceError(
                f"transmit surrogate decreased ({t_before:.6e} -> {t_after:.6e})", trace
            )
        beam_set.instantaneous = V
        covs = antenna_covariances(problem, V)
        mixed = beam_set.all_mixed()
        rops = [build_operands(k, problem, mixed, W, covs) for k in range(K)]
        for k in range(K):
            W[k] = update_combiner(k, rops[k], D)
        obj = _objective(problem, beam_set, W)
        if obj > best[0]:
            best = (obj, V.copy(), W.copy())
        trace.append(
            {
                "iteration": it,
                "surrogate_before": t_before,
                "surrogate_after": t_after,
                "objective": obj,
            }
        )
        if prev_obj is not None and abs(obj - prev_obj) <= tol * max(1.0, abs(prev_obj)):
            break
        if tol == np.inf:
            break
        prev_obj = obj
    # the alternation is only locally monotone; return the best iterate seen
    beam_set.instantaneous = best[1]
    return beam_set, CombinerSet(combiners=best[2]), trace
