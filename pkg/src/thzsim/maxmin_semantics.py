"""Max-min optimization of the semantic states by bisection.

With beamformers and combiners fixed, the per-user information measure is a
log-det ratio in the lifted state Z_k = z_k z_k^T, so the feasibility problem
at level alpha searches PSD trace-capped lifts whose minimum margin clears
alpha.  A projected-gradient ascent (compiled kernel when available) handles
the lift, a rank-one extraction plus polish closes the relaxation gap, and
every accepted witness is re-verified on the rank-one point, including the
Cantelli outage surrogate.
"""

from dataclasses import dataclass

import numpy as np

from thzsim import _kernels
from thzsim.semantic_metrics import (
    CausalState,
    CovariancePair,
    Decoder,
    SemanticScorer,
    SemanticThresholds,
    candidate_weight_sum,
    chance_constraint_satisfied,
    distortion,
    semantic_information,
    semantic_reliability,
)

FEAS_SLACK = 1e-9


@dataclass
class BisectionState:
    lower: float
    upper: float
    midpoint: float = 0.0
    best_states: np.ndarray | None = None


@dataclass
class LiftedState:
    matrix: np.ndarray  # (D, D) PSD
    extraction_residual: float = 0.0


@dataclass
class FeasibilityResult:
    feasible: bool
    states: np.ndarray | None  # (K, D) rank-one witnesses
    margins: np.ndarray | None
    converged: bool  # False: hit the iteration cap while still improving
    lifted: list | None = None


@dataclass
class FeasibilityContext:
    """Precomputed tensors for feasibility checks at many alpha levels.

    Everything is noise-normalized: base_k = W_k^H W_k, the deterministic
    effective maps carry (1 - sw) sqrt(p/sigma^2) and the moment sandwiches
    carry sw^2 p / sigma^2, so margins equal the unnormalized ones.
    """

    Tdet: np.ndarray  # (K, K, D, D) complex
    Phi: np.ndarray  # (K, K, D, D, D) complex
    PhiBar: np.ndarray  # (K, K, D, D) complex
    base: np.ndarray  # (K, D, D) complex
    weights: np.ndarray  # (K,)
    cap: float
    prior_means: np.ndarray  # (K, D)
    prior_covs: np.ndarray  # (K, D, D)
    decode_maps: np.ndarray  # (K, K, D, D) complex, sqrt(p_i) W_k^H H_k V_i
    noise_var: float
    thresholds: SemanticThresholds
    powers: np.ndarray | None = None  # (K,)
    err_vars: np.ndarray | None = None  # (K,) channel-estimate error variance
    beam_quads: np.ndarray | None = None  # (K, D, D) Re(Vmix^H Vmix)
    wtw: np.ndarray | None = None  # (K, D, D) raw combiner gram
    n_iter: int = 400
    polish_iter: int = 250
    tau: float = 0.05

    @property
    def num_users(self) -> int:
        return self.base.shape[0]

    @property
    def dim(self) -> int:
        return self.base.shape[1]


def build_feasibility_context(
    channels,
    beam_set,
    combiners,
    weights,
    noise_var,
    thresholds,
    powers=None,
    cap: float = 1.0,
    prior_means=None,
    prior_covs=None,
    col_covs=None,
    m2=None,
    static_weight: float = 0.0,
    est_error_vars=None,
    n_iter: int = 400,
    polish_iter: int = 250,
) -> FeasibilityContext:
    channels = np.asarray(channels, dtype=np.complex128)
    K, N, M = channels.shape
    W = np.asarray(combiners.combiners if hasattr(combiners, "combiners") else combiners)
    D = W.shape[2]
    V_inst = beam_set.instantaneous
    mixed = beam_set.all_mixed()
    p = np.ones(K) if powers is None else np.asarray(powers, dtype=np.float64)
    ev = np.zeros(K) if est_error_vars is None else np.asarray(est_error_vars, float)
    sw = static_weight
    s = noise_var
    Tdet = np.zeros((K, K, D, D), dtype=np.complex128)
    Phi = np.zeros((K, K, D, D, D), dtype=np.complex128)
    PhiBar = np.zeros((K, K, D, D), dtype=np.complex128)
    base = np.zeros((K, D, D), dtype=np.complex128)
    decode_maps = np.zeros((K, K, D, D), dtype=np.complex128)
    beam_gain = np.array([np.linalg.norm(mixed[i], 2) ** 2 for i in range(K)])
    for k in range(K):
        Pk = W[k].conj().T @ channels[k]  # (D, M)
        base[k] = W[k].conj().T @ W[k]
        for i in range(K):
            # decode belief conditions on the realized mixed beams
            decode_maps[k, i] = np.sqrt(p[i]) * (Pk @ mixed[i])
            Tdet[k, i] = (1.0 - sw) * np.sqrt(p[i] / s) * (Pk @ V_inst[i])
            if sw > 0.0 and col_covs is not None:
                for d in range(D):
                    Phi[k, i, d] = (sw**2 * p[i] / s) * (Pk @ col_covs[i][d] @ Pk.conj().T)
                PhiBar[k, i] = (sw**2 * p[i] / s) * (Pk @ m2[i] @ Pk.conj().T)
    if prior_means is None:
        prior_means = np.zeros((K, D))
    if prior_covs is None:
        prior_covs = np.tile((cap**2 / D) * np.eye(D), (K, 1, 1))
    beam_quads = np.stack([np.real(mixed[i].conj().T @ mixed[i]) for i in range(K)])
    wtw = np.stack([W[k].conj().T @ W[k] for k in range(K)])
    return FeasibilityContext(
        Tdet=Tdet,
        Phi=Phi,
        PhiBar=PhiBar,
        base=base,
        weights=np.asarray(weights, dtype=np.float64),
        cap=cap,
        prior_means=np.asarray(prior_means, dtype=np.float64),
        prior_covs=np.asarray(prior_covs, dtype=np.float64),
        decode_maps=decode_maps,
        noise_var=noise_var,
        thresholds=thresholds,
        powers=p,
        err_vars=ev,
        beam_quads=beam_quads,
        wtw=wtw,
        n_iter=n_iter,
        polish_iter=polish_iter,
    )


def margins(ctx: FeasibilityContext, states, alpha: float) -> np.ndarray:
    """Per-user information margins at rank-one states (K, D)."""
    z = np.asarray(states, dtype=np.float64)
    Z = np.einsum("kd,ke->kde", z, z)
    return _kernels.margins_at(ctx.Tdet, ctx.Phi, ctx.PhiBar, ctx.base, ctx.weights, Z, alpha)


def believed_noise_covs(ctx: FeasibilityContext, states) -> np.ndarray:
    """Decode-model interference+noise covariance per user.

    Conditions on the realized mixed beams (the transmitter knows what it
    sends); the moment expansion stays in the information margins only.
    """
    z = np.asarray(states, dtype=np.float64)
    K, D = z.shape
    out = np.zeros((K, D, D), dtype=np.complex128)
    for k in range(K):
        wtw = ctx.base[k] if ctx.wtw is None else ctx.wtw[k]
        R = ctx.noise_var * wtw
        for i in range(K):
            if i != k:
                a = ctx.decode_maps[k, i] @ z[i]
                R = R + np.outer(a, a.conj())
            if ctx.err_vars is not None and ctx.err_vars[k] > 0:
                # estimate-error scatter of stream i (own stream included)
                quad = float(z[i] @ ctx.beam_quads[i] @ z[i])
                R = R + ctx.powers[i] * ctx.err_vars[k] * quad * wtw
        out[k] = R
    return out


def _chance_ok(ctx: FeasibilityContext, states, epsilon=None) -> tuple[bool, np.ndarray]:
    """Cantelli outage check per user; returns (all_ok, per-user ok flags)."""
    covs = believed_noise_covs(ctx, states)
    eps = ctx.thresholds.outage_tolerance if epsilon is None else epsilon
    ok = np.zeros(ctx.num_users, dtype=bool)
    for k in range(ctx.num_users):
        dec = Decoder(
            eff_map=ctx.decode_maps[k, k],
            noise_cov=covs[k],
            prior_mean=ctx.prior_means[k],
            prior_cov=ctx.prior_covs[k],
        )
        mu, sd = dec.distortion_moments(states[k])
        ok[k] = chance_constraint_satisfied(
            mu, sd, ctx.thresholds.distortion_threshold, eps
        )
    return bool(ok.all()), ok


def _chance_repair(ctx: FeasibilityContext, states, epsilon=None,
                   gamma_floor: float = 0.0) -> np.ndarray:
    """Shrink failing states toward their prior mean until the outage
    surrogate holds (never below ``gamma_floor`` of the excursion); the
    semantic margins are re-verified by the caller."""
    z = np.asarray(states, dtype=np.float64).copy()
    all_ok, ok = _chance_ok(ctx, z, epsilon)
    if all_ok:
        return z
    for k in np.flatnonzero(~ok):
        lo, hi = gamma_floor, 1.0
        base_dir = z[k] - ctx.prior_means[k]
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            z[k] = ctx.prior_means[k] + mid * base_dir
            if _chance_ok(ctx, z, epsilon)[1][k]:
                lo = mid
            else:
                hi = mid
        z[k] = ctx.prior_means[k] + lo * base_dir
    return z


def _starts(ctx: FeasibilityContext, warm=None):
    K, D = ctx.num_users, ctx.dim
    starts = []
    if warm is not None:
        starts.append(np.asarray(warm, dtype=np.float64))
    pri = ctx.prior_means.copy()
    for k in range(K):
        nrm = np.linalg.norm(pri[k])
        if nrm < 1e-9:
            pri[k] = 0.0
            pri[k][0] = 0.5 * ctx.cap
        elif nrm > ctx.cap:
            pri[k] *= ctx.cap / nrm
    starts.append(pri)
    eig = np.zeros((K, D))
    for k in range(K):
        Q = np.real(ctx.Tdet[k, k].conj().T @ ctx.Tdet[k, k])
        for d in range(D):
            Q[d, d] += np.real(np.trace(ctx.Phi[k, k, d])) + np.real(np.trace(ctx.PhiBar[k, k]))
        vals, vecs = np.linalg.eigh(0.5 * (Q + Q.T))
        v = vecs[:, -1]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        eig[k] = ctx.cap * v
    starts.append(eig)
    return starts


def feasibility(ctx: FeasibilityContext, alpha: float, warm=None) -> FeasibilityResult:
    """Search for rank-one states meeting the margin and outage constraints.

    Success requires the rank-one re-verification to pass; an unsuccessful
    search that exhausted its iteration budget while still improving is
    flagged converged=False (infeasible-with-warning).
    """
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    tau = ctx.tau * max(1.0, abs(alpha))
    converged = True
    best = None
    for z0 in _starts(ctx, warm):
        Z0 = np.einsum("kd,ke->kde", z0, z0)
        Z, m_lift, used = _kernels.pga_ascent(
            ctx.Tdet, ctx.Phi, ctx.PhiBar, ctx.base, ctx.weights,
            alpha, ctx.cap**2, Z0, ctx.n_iter, tau, FEAS_SLACK,
        )
        z_ext = np.zeros((ctx.num_users, ctx.dim))
        resid = 0.0
        for k in range(ctx.num_users):
            vals, vecs = np.linalg.eigh(0.5 * (Z[k] + Z[k].T))
            lam = max(vals[-1], 0.0)
            v = vecs[:, -1]
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
            z_ext[k] = np.sqrt(lam) * v
            resid = max(resid, float(np.linalg.norm(Z[k] - lam * np.outer(v, v))))
        z_pol, m_r1, used_pol = _kernels.rank1_polish(
            ctx.Tdet, ctx.Phi, ctx.PhiBar, ctx.base, ctx.weights,
            alpha, ctx.cap, z_ext, ctx.polish_iter, tau, FEAS_SLACK,
        )
        if used >= ctx.n_iter and used_pol >= ctx.polish_iter:
            converged = False
        if m_r1.min() >= -FEAS_SLACK:
            z_fix = _chance_repair(ctx, z_pol)
            m_fix = margins(ctx, z_fix, alpha)
            if m_fix.min() >= -FEAS_SLACK and _chance_ok(ctx, z_fix)[0]:
                lifted = [LiftedState(matrix=np.outer(zz, zz), extraction_residual=resid)
                          for zz in z_fix]
                return FeasibilityResult(
                    feasible=True, states=z_fix, margins=m_fix, converged=True, lifted=lifted
                )
        if best is None or m_r1.min() > best[1].min():
            best = (z_pol, m_r1)
    return FeasibilityResult(
        feasible=False, states=best[0], margins=best[1], converged=converged
    )


def isolated_upper_bound(ctx: FeasibilityContext) -> float:
    """Interference-free information bound with 10% headroom (bisection cap)."""
    best = 0.0
    K, D = ctx.num_users, ctx.dim
    for k in range(K):
        sub = FeasibilityContext(
            Tdet=ctx.Tdet[k : k + 1, k : k + 1],
            Phi=ctx.Phi[k : k + 1, k : k + 1],
            PhiBar=ctx.PhiBar[k : k + 1, k : k + 1],
            base=ctx.base[k : k + 1],
            weights=ctx.weights[k : k + 1],
            cap=ctx.cap,
            prior_means=ctx.prior_means[k : k + 1],
            prior_covs=ctx.prior_covs[k : k + 1],
            decode_maps=ctx.decode_maps[k : k + 1, k : k + 1],
            noise_var=ctx.noise_var,
            thresholds=ctx.thresholds,
            powers=None if ctx.powers is None else ctx.powers[k : k + 1],
            err_vars=None if ctx.err_vars is None else ctx.err_vars[k : k + 1],
            beam_quads=None if ctx.beam_quads is None else ctx.beam_quads[k : k + 1],
            wtw=None if ctx.wtw is None else ctx.wtw[k : k + 1],
        )
        for z0 in _starts(sub):
            z, m, _ = _kernels.rank1_polish(
                sub.Tdet, sub.Phi, sub.PhiBar, sub.base, sub.weights,
                0.0, sub.cap, z0, 300, 0.05, np.inf,
            )
            best = max(best, float(m[0]))
    return 1.1 * best


def bisect_maxmin(ctx: FeasibilityContext, tol_alpha: float = 1e-3,
                  alpha_upper: float | None = None):
    """Bisection on the auxiliary level; returns (states, alpha, n_iterations).

    The bracket keeps feasibility(lower) true and feasibility(upper) false;
    iteration count is exactly ceil(log2(range / tol)).
    """
    res0 = feasibility(ctx, 0.0)
    if not res0.feasible:
        raise ValueError("infeasible at alpha = 0: degenerate configuration")
    lower, upper = 0.0, alpha_upper if alpha_upper is not None else isolated_upper_bound(ctx)
    if upper <= lower:
        return res0.states, 0.0, 0
    state = BisectionState(lower=lower, upper=upper, best_states=res0.states)
    n_iter = 0
    warm = res0.states
    while (state.upper - state.lower) > tol_alpha:
        state.midpoint = 0.5 * (state.lower + state.upper)
        res = feasibility(ctx, state.midpoint, warm=warm)
        if res.feasible:
            state.lower = state.midpoint
            state.best_states = res.states
            warm = res.states
        else:
            state.upper = state.midpoint
        n_iter += 1
    return state.best_states, state.lower, n_iter


# ---------------------------------------------------------------------------
# transmission evaluation and the per-step pipeline
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    beamformers: object
    combiners: object
    states: np.ndarray  # (K, D) transmitted
    causal_states: list  # CausalState per user
    semantic_info: np.ndarray  # (K,)
    reliability: np.ndarray  # (K,)
    distortion: np.ndarray  # (K,)
    min_info: float
    convergence_iterations: int
    alpha: float
    samples: list  # per user: list of (sent, decoded) pairs


def evaluate_transmission(
    channels_true,
    mixed_beams,
    combiners,
    states,
    noise_var,
    powers,
    prior_means,
    prior_covs,
    scorers,
    noise_draws,
    cand_rng,
    delta=None,
):
    """Physically transmit the states and measure the received metrics.

    The information measure is evaluated with the true-channel covariances
    (what actually arrived), candidates centered on the decoded state; the
    reliability is the empirical in-threshold fraction over the noise draws.
    All schemes share the same noise draws for paired comparisons.
    """
    channels_true = np.asarray(channels_true)
    W = np.asarray(combiners.combiners if hasattr(combiners, "combiners") else combiners)
    K = channels_true.shape[0]
    D = W.shape[2]
    z = np.asarray(states, dtype=np.float64)
    info = np.zeros(K)
    rel = np.zeros(K)
    dist = np.zeros(K)
    samples = []
    for k in range(K):
        thresh = scorers[k].delta if delta is None else delta
        eff = np.zeros((K, D, D), dtype=np.complex128)
        for i in range(K):
            eff[i] = np.sqrt(powers[i]) * (W[k].conj().T @ channels_true[k] @ mixed_beams[i])
        T_own = eff[k]
        interf = np.zeros(D, dtype=np.complex128)
        R_bar = noise_var * (W[k].conj().T @ W[k])
        for i in range(K):
            if i == k:
                continue
            a = eff[i] @ z[i]
            interf += a
            R_bar = R_bar + np.outer(a, a.conj())
        own = T_own @ z[k]
        R = R_bar + np.outer(own, own.conj())
        cov = CovariancePair(R=0.5 * (R + R.conj().T), R_bar=0.5 * (R_bar + R_bar.conj().T))
        dec = Decoder(eff_map=T_own, noise_cov=cov.R_bar,
                      prior_mean=prior_means[k], prior_cov=prior_covs[k])
        user_samples = []
        dists = []
        y_first = None
        for n in range(noise_draws.shape[1]):
            v = noise_draws[k, n]
            y = own + interf + W[k].conj().T @ v
            if y_first is None:
                y_first = y
            z_hat = dec.decode(y)
            user_samples.append((z[k].copy(), z_hat))
            dists.append(distortion(z[k], z_hat))
        rel[k] = semantic_reliability(user_samples, thresh)
        dist[k] = float(np.mean(dists))
        # transmitted-state candidates weighted by likelihood and richness;
        # decoded-state candidates anchor the similarity factor
        cands = scorers[k].sample_candidates(z[k], cand_rng)
        dec_cands = scorers[k].sample_candidates(dec.decode(y_first), cand_rng)
        wsum = candidate_weight_sum(cands, y_first, T_own, cov, scorers[k],
                                    decoded_candidates=dec_cands)
        info[k] = semantic_information(cov, wsum)
        samples.append(user_samples)
    return info, rel, dist, samples


def full_pipeline_step(
    problem,
    thresholds: SemanticThresholds,
    channels_true,
    static_states=None,
    pred_covs=None,
    beta: float = 1.0,
    cap: float = 1.0,
    scorers=None,
    rounds: int = 2,
    tol_alpha: float = 0.02,
    noise_draws=None,
    cand_rng=None,
    est_error_vars=None,
    solver_opts=None,
    feas_opts=None,
) -> StepResult:
    """One slot of the proposed scheme: solve beams, max-min states, transmit.

    ``problem`` is the gev SolverProblem for this slot (estimated channels,
    weights, static beam parts).  With mixing = 1 and beta = 1 the statics are
    ignored entirely and the step reduces to the static-free solver path.
    """
    from thzsim.gev_beamformer import alternating_solve

    K, D = problem.num_users, problem.dim
    static_free = (problem.mixing >= 1.0 and beta >= 1.0) or static_states is None
    if static_free:
        prior_means = np.zeros((K, D))
        prior_covs = np.tile((cap**2 / D) * np.eye(D), (K, 1, 1))
        z_static = np.zeros((K, D))
    else:
        prior_means = np.asarray(static_states, dtype=np.float64)
        # the receiver's prior must also cover the optimized instantaneous
        # part, which can sit anywhere inside the cap
        prior_covs = np.asarray(pred_covs, dtype=np.float64) + \
            (beta**2 * cap**2 / D) * np.eye(D)[None, :, :]
        z_static = prior_means
    if scorers is None:
        scorers = [SemanticScorer(delta=thresholds.distortion_threshold) for _ in range(K)]

    solver_opts = solver_opts or {}
    feas_opts = feas_opts or {}
    total_iters = 0
    z_cur = prior_means.copy()
    for k in range(K):
        if np.linalg.norm(z_cur[k]) < 1e-9:
            z_cur[k, 0] = 0.5 * cap
    alpha_star = 0.0
    beam_set = comb_set = None
    for _ in range(max(rounds, 1)):
        problem.states = z_cur
        beam_set, comb_set, trace = alternating_solve(problem, **solver_opts)
        total_iters += len(trace)
        # a zero-forcing start often escapes the matched-filter local optimum
        # in crowded configurations; keep whichever solve believes more
        m_ant = problem.channels.shape[2]
        if K * D <= m_ant and K > 1:
            from thzsim.baselines import naive_zf
            from thzsim.gev_beamformer import solve_objective

            zf_b, zf_c = naive_zf(problem.channels, z_cur, dim=D)
            b2, c2, t2 = alternating_solve(
                problem, init=(zf_b.instantaneous, zf_c.combiners), **solver_opts
            )
            total_iters += len(t2)
            if solve_objective(problem, b2, c2.combiners) > solve_objective(
                problem, beam_set, comb_set.combiners
            ):
                beam_set, comb_set = b2, c2
        ctx = build_feasibility_context(
            problem.channels, beam_set, comb_set, problem.weights,
            problem.noise_var, thresholds, powers=problem.powers, cap=cap,
            prior_means=prior_means, prior_covs=prior_covs,
            col_covs=problem.col_covs, m2=problem.m2,
            static_weight=problem.static_weight,
            est_error_vars=est_error_vars, **feas_opts,
        )
        try:
            z_star, alpha_star, _ = bisect_maxmin(ctx, tol_alpha=tol_alpha)
        except ValueError:
            # outage-degenerate slot: transmit the repaired prior prediction
            z_star = _chance_repair(ctx, prior_means)
            alpha_star = 0.0
        # safety backoff: leave outage headroom beyond the feasibility
        # budget, giving up at most a bounded part of the excursion
        z_star = _chance_repair(ctx, z_star,
                                epsilon=0.5 * thresholds.outage_tolerance,
                                gamma_floor=0.75)
        z_cur = np.asarray(z_star)
    causal_states = []
    for k in range(K):
        if static_free or beta >= 1.0:
            causal_states.append(CausalState(vector=z_cur[k], instantaneous=z_cur[k],
                                             static=np.zeros(D), mixing=1.0))
        else:
            inst = (z_cur[k] - (1.0 - beta) * z_static[k]) / beta
            causal_states.append(CausalState(vector=z_cur[k], instantaneous=inst,
                                             static=z_static[k], mixing=beta))

    mixed = beam_set.all_mixed()
    info, rel, dist, samples = evaluate_transmission(
        channels_true, mixed, comb_set, z_cur, problem.noise_var, problem.powers,
        prior_means, prior_covs, scorers, noise_draws, cand_rng,
        delta=thresholds.distortion_threshold,
    )
    return StepResult(
        beamformers=beam_set,
        combiners=comb_set,
        states=z_cur,
        causal_states=causal_states,
        semantic_info=info,
        reliability=rel,
        distortion=dist,
        min_info=float(info.min()),
        convergence_iterations=total_iters,
        alpha=alpha_star,
        samples=samples,
    )
