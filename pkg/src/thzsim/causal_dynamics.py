"""Causal latent dynamics: DAG-structured transitions, static-part prediction,
variational evidence bounds and small-scale structure recovery.

The linear-Gaussian instantiation keeps every quantity closed form: per-node
conditionals are Gaussians whose mean is a weighted sum of parent-masked
coordinates, interventions swap a node's conditional for a mean-shifted one,
the latent filter is exact, and penalized structure scores reduce to per-node
regressions.  A neural trainer can replace the parameters through the
``cgm-model/v1`` exchange file.
"""

from dataclasses import dataclass

import numpy as np

MODEL_SCHEMA = "cgm-model/v1"
MAX_EXACT_NODES = 4
MAX_GREEDY_NODES = 6
_VAR_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# graph + transition model
# ---------------------------------------------------------------------------


def topological_order(adjacency: np.ndarray) -> list[int]:
    """Kahn topological sort; raises ValueError on a cycle."""
    adj = np.asarray(adjacency)
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    stack = sorted(np.flatnonzero(indeg == 0).tolist())
    order = []
    indeg = indeg.copy()
    while stack:
        n = stack.pop(0)
        order.append(n)
        for j in np.flatnonzero(adj[n]):
            indeg[j] -= 1
            if indeg[j] == 0:
                stack.append(int(j))
    if len(order) != d:
        raise ValueError("adjacency matrix contains a cycle; CGM requires a DAG")
    return order


def is_dag(adjacency: np.ndarray) -> bool:
    try:
        topological_order(adjacency)
        return True
    except ValueError:
        return False


@dataclass
class NodeTransition:
    """Linear-Gaussian conditional: z_i' ~ N(w . (mask_i * z) + b, var)."""

    weights: np.ndarray
    bias: float
    noise_var: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.noise_var < 0:
            raise ValueError("noise variance must be >= 0")


@dataclass
class TransitionModel:
    observational: list[NodeTransition]
    interventional: list[NodeTransition]

    @property
    def dim(self) -> int:
        return len(self.observational)


@dataclass
class CausalGraphModel:
    """DAG over state coordinates plus intervention bookkeeping.

    adjacency[i, j] = 1 means coordinate i is a direct cause of coordinate j,
    so the parent mask of node j is column j.  ``intervention_targets`` lists
    the nodes whose conditional is replaced in intervened environments.
    """

    adjacency: np.ndarray
    intervention_targets: tuple[int, ...] = ()
    edge_probs: np.ndarray | None = None
    target_probs: np.ndarray | None = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.int8)
        topological_order(self.adjacency)  # validates DAG-ness

    @property
    def dim(self) -> int:
        return self.adjacency.shape[0]

    def parent_mask(self, node: int) -> np.ndarray:
        return self.adjacency[:, node].astype(np.float64)

    def column_mask(self, node: int) -> np.ndarray:
        """All-ones beam-column mask with intervened columns zeroed."""
        m = np.ones(self.dim)
        if node in self.intervention_targets:
            m[:] = 1.0
            m[node] = 0.0
        return m


def make_intervened(node: NodeTransition, shift_sigmas: float = 2.0) -> NodeTransition:
    """Default intervention: mean shift of ``shift_sigmas`` noise std."""
    return NodeTransition(
        weights=node.weights.copy(),
        bias=node.bias + shift_sigmas * np.sqrt(max(node.noise_var, _VAR_FLOOR)),
        noise_var=node.noise_var,
    )


def transition_matrix(graph: CausalGraphModel, model: TransitionModel, intervened=frozenset()):
    """(A, b, q): mean map z -> A z + b and per-node noise variances."""
    d = graph.dim
    A = np.zeros((d, d))
    b = np.zeros(d)
    q = np.zeros(d)
    for i in range(d):
        node = model.interventional[i] if i in intervened else model.observational[i]
        A[i] = node.weights * graph.parent_mask(i)
        b[i] = node.bias
        q[i] = node.noise_var
    return A, b, q


def sample_transition(
    graph: CausalGraphModel,
    model: TransitionModel,
    z_prev: np.ndarray,
    rng: np.random.Generator,
    intervened=frozenset(),
) -> np.ndarray:
    """One step of the interventional transition kernel."""
    A, b, q = transition_matrix(graph, model, intervened)
    mean = A @ np.asarray(z_prev, dtype=np.float64) + b
    return mean + np.sqrt(q) * rng.standard_normal(graph.dim)


def node_logpdf(node: NodeTransition, mask: np.ndarray, z_prev, z_i: float) -> float:
    var = max(node.noise_var, _VAR_FLOOR)
    mu = float(node.weights @ (mask * z_prev)) + node.bias
    return -0.5 * (np.log(2 * np.pi * var) + (z_i - mu) ** 2 / var)


def transition_logpdf(graph, model, z_prev, z_next, intervened=frozenset()) -> float:
    """Log joint transition density: the sum of per-node conditionals."""
    total = 0.0
    for i in range(graph.dim):
        node = model.interventional[i] if i in intervened else model.observational[i]
        total += node_logpdf(node, graph.parent_mask(i), z_prev, z_next[i])
    return total


def chain_graph(d: int) -> CausalGraphModel:
    adj = np.zeros((d, d), dtype=np.int8)
    for i in range(d - 1):
        adj[i, i + 1] = 1
    return CausalGraphModel(adjacency=adj)


def er_dag(d: int, p: float, rng: np.random.Generator) -> CausalGraphModel:
    """Erdos-Renyi DAG: edges follow a random topological order."""
    order = rng.permutation(d)
    adj = np.zeros((d, d), dtype=np.int8)
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                adj[order[a], order[b]] = 1
    return CausalGraphModel(adjacency=adj)


def random_transitions(
    graph: CausalGraphModel,
    rng: np.random.Generator,
    weight_range=(0.5, 0.9),
    noise_std=0.3,
    shift_sigmas: float = 2.0,
    bias_scale: float = 0.0,
) -> TransitionModel:
    """Ground-truth transition parameters for simulation studies.

    Nonzero ``bias_scale`` gives the content a per-coordinate operating point
    (stationary mean away from the origin), as modal intensities have.
    """
    obs = []
    for i in range(graph.dim):
        w = rng.uniform(*weight_range, size=graph.dim) * rng.choice([-1.0, 1.0], size=graph.dim)
        w *= graph.parent_mask(i)
        bias = bias_scale * rng.uniform(-1.0, 1.0) if bias_scale > 0 else 0.0
        obs.append(NodeTransition(weights=w, bias=bias, noise_var=noise_std**2))
    intv = [make_intervened(n, shift_sigmas) for n in obs]
    return TransitionModel(observational=obs, interventional=intv)


# ---------------------------------------------------------------------------
# beam codebook and static-part posterior
# ---------------------------------------------------------------------------


@dataclass
class BeamCodebook:
    """Unit-norm candidate beams; defaults to the columns of a DFT matrix."""

    codewords: np.ndarray  # (C, M) complex, rows unit norm
    kind: str = "explicit"

    @classmethod
    def dft(cls, m: int, size: int | None = None) -> "BeamCodebook":
        size = m if size is None else size
        if size < m:
            raise ValueError("codebook size must be >= number of antennas")
        idx = np.arange(m)[None, :] * np.arange(size)[:, None]
        cw = np.exp(2j * np.pi * idx / size) / np.sqrt(m)
        return cls(codewords=cw.astype(np.complex128), kind="dft")

    def __post_init__(self):
        norms = np.linalg.norm(self.codewords, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("codewords must be unit norm")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]


@dataclass
class PosteriorSnapshot:
    """Posterior state used by the beamforming layer.

    Carries the latent predictive (mean/covariance), the per-column codeword
    posterior for the static beam part, its mode, and the centered second
    moments consumed by the interference expansion.
    """

    z_mean: np.ndarray  # (D,)
    z_cov: np.ndarray  # (D, D)
    codeword_posterior: np.ndarray  # (D, C)
    static_beam: np.ndarray  # (M, D), per-column posterior-mode codeword
    col_means: np.ndarray  # (M, D) posterior mean per column
    col_covs: np.ndarray  # (D, M, M) centered covariance per column
    m2: np.ndarray  # (M, M) = sum_d col_covs[d]

    def log_predictive(self, z: np.ndarray) -> float:
        d = self.z_mean.shape[0]
        cov = self.z_cov + _VAR_FLOOR * np.eye(d)
        diff = np.asarray(z) - self.z_mean
        sign, logdet = np.linalg.slogdet(cov)
        quad = diff @ np.linalg.solve(cov, diff)
        return float(-0.5 * (d * np.log(2 * np.pi) + logdet + quad))

    def source_information(self, z: np.ndarray) -> float:
        """Semantic richness: predictive surprisal above its minimum.

        -log q(z | history) measured relative to the predictive mode, which
        keeps it nonnegative for any density scale (a raw floored surprisal
        zeroes out whenever the density exceeds one).
        """
        d = self.z_mean.shape[0]
        cov = self.z_cov + _VAR_FLOOR * np.eye(d)
        diff = np.asarray(z) - self.z_mean
        return float(0.5 * diff @ np.linalg.solve(cov, diff))


class StaticPredictor:
    """Recursive posterior over the statistics-driven beam and state parts.

    The latent side is the exact linear-Gaussian one-step predictive given the
    recorded state history.  The beam side keeps, per beam column d, a
    discrete posterior over codewords updated with the alignment likelihood
    |c^H h_d|^2 of the d-th dominant transmit direction of the channel
    estimate, with exponential forgetting.
    """

    def __init__(
        self,
        graph: CausalGraphModel,
        transitions: TransitionModel,
        codebook: BeamCodebook,
        dim: int,
        forgetting: float = 0.9,
        prior_mean=None,
        prior_var: float = 0.5,
        initial_log_posterior: np.ndarray | None = None,
        alignment_temp: float = 1.0,
    ):
        if not 0.0 < forgetting <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if alignment_temp <= 0.0:
            raise ValueError("alignment temperature must be positive")
        self.graph = graph
        self.transitions = transitions
        self.codebook = codebook
        self.dim = dim
        self.forgetting = forgetting
        self.alignment_temp = alignment_temp
        self._z_mean = np.zeros(dim) if prior_mean is None else np.asarray(prior_mean, float)
        self._z_cov = prior_var * np.eye(dim)
        if initial_log_posterior is None:
            self._log_post = np.zeros((dim, codebook.size))
        else:
            self._log_post = np.asarray(initial_log_posterior, dtype=np.float64).copy()
        self._steps = 0

    def update(self, z_obs: np.ndarray, h_est: np.ndarray) -> None:
        """Advance one slot given the realized state and channel estimate."""
        A, b, q = transition_matrix(self.graph, self.transitions)
        self._z_mean = A @ np.asarray(z_obs, dtype=np.float64) + b
        self._z_cov = np.diag(np.maximum(q, _VAR_FLOOR))
        # beam columns track the top-D transmit directions of the estimate
        _, _, vh = np.linalg.svd(h_est)
        for d in range(self.dim):
            hdir = vh[min(d, vh.shape[0] - 1)].conj()
            like = np.abs(self.codebook.codewords.conj() @ hdir) ** 2
            step = self.alignment_temp * np.log(like + 1e-300)
            self._log_post[d] = self.forgetting * self._log_post[d] + step
            self._log_post[d] -= self._log_post[d].max()
        self._steps += 1

    def snapshot(self) -> PosteriorSnapshot:
        cw = self.codebook.codewords  # (C, M)
        m_ant = cw.shape[1]
        post = np.exp(self._log_post)
        post /= post.sum(axis=1, keepdims=True)
        static = np.zeros((m_ant, self.dim), dtype=np.complex128)
        means = np.zeros((m_ant, self.dim), dtype=np.complex128)
        covs = np.zeros((self.dim, m_ant, m_ant), dtype=np.complex128)
        for d in range(self.dim):
            static[:, d] = cw[int(np.argmax(post[d]))]
            mean_d = post[d] @ cw
            means[:, d] = mean_d
            second = (cw.conj().T * post[d]) @ cw
            covs[d] = second.T - np.outer(mean_d, mean_d.conj())
            covs[d] = 0.5 * (covs[d] + covs[d].conj().T)
        return PosteriorSnapshot(
            z_mean=self._z_mean.copy(),
            z_cov=self._z_cov.copy(),
            codeword_posterior=post,
            static_beam=static,
            col_means=means,
            col_covs=covs,
            m2=covs.sum(axis=0),
        )


def predict_static_components(history, graph, transitions, codebook, forgetting=0.9, **kw):
    """Replay a history of (z, h_est) pairs and return the posterior snapshot."""
    if not history:
        raise ValueError("history must contain at least one (z, h_est) entry")
    pred = StaticPredictor(graph, transitions, codebook, graph.dim, forgetting, **kw)
    for z_obs, h_est in history:
        pred.update(z_obs, h_est)
    return pred.snapshot()


# ---------------------------------------------------------------------------
# evidence lower bound (mean-field coordinate ascent)
# ---------------------------------------------------------------------------


@dataclass
class ObsEpisode:
    """Observation sequence for the bound: x_t = z_t + N(0, obs_var I)."""

    x: np.ndarray  # (T, D)
    obs_var: float = 0.01


def _elbo_value(A, b, q, m0, v0, r, x, mus, sigs):
    t_len, d = x.shape
    q = np.maximum(q, _VAR_FLOOR)
    r = max(r, _VAR_FLOOR)
    total = 0.0
    for t in range(t_len):
        diff = x[t] - mus[t]
        total += -0.5 * (d * np.log(2 * np.pi * r) + (diff @ diff + np.trace(sigs[t])) / r)
        if t == 0:
            dv = mus[0] - m0
            total += -0.5 * np.sum(np.log(2 * np.pi * v0) + (dv**2 + np.diag(sigs[0])) / v0)
        else:
            dm = mus[t] - A @ mus[t - 1] - b
            total += -0.5 * np.sum(np.log(2 * np.pi * q))
            total += -0.5 * (dm @ (dm / q) + np.trace(sigs[t] / q[:, None]))
            total += -0.5 * np.trace((A.T * (1.0 / q)) @ A @ sigs[t - 1])
        sign, logdet = np.linalg.slogdet(2 * np.pi * np.e * sigs[t])
        total += 0.5 * logdet
    return float(total)


def fit_posterior(graph, model, episode: ObsEpisode, prior_mean=None, prior_var=0.5,
                  max_sweeps=200, tol=1e-10):
    """Mean-field Gaussian posterior by exact coordinate ascent.

    Each sweep re-solves every q(z_t) in closed form, so the bound trace is
    nondecreasing by construction.  Returns (means, covariances, elbo_trace).
    """
    x = np.asarray(episode.x, dtype=np.float64)
    t_len, d = x.shape
    A, b, q = transition_matrix(graph, model)
    q = np.maximum(q, _VAR_FLOOR)
    r = max(episode.obs_var, _VAR_FLOOR)
    m0 = np.zeros(d) if prior_mean is None else np.asarray(prior_mean, float)
    v0 = np.full(d, prior_var)

    mus = x.copy()
    sigs = np.array([r * np.eye(d) for _ in range(t_len)])
    qinv = 1.0 / q
    AtQA = (A.T * qinv) @ A
    trace = [_elbo_value(A, b, q, m0, v0, r, x, mus, sigs)]
    for _ in range(max_sweeps):
        for t in range(t_len):
            prec = np.eye(d) / r
            rhs = x[t] / r
            if t == 0:
                prec = prec + np.diag(1.0 / v0)
                rhs = rhs + m0 / v0
            else:
                prec = prec + np.diag(qinv)
                rhs = rhs + qinv * (A @ mus[t - 1] + b)
            if t + 1 < t_len:
                prec = prec + AtQA
                rhs = rhs + A.T @ (qinv * (mus[t + 1] - b))
            sigs[t] = np.linalg.inv(prec)
            mus[t] = sigs[t] @ rhs
        trace.append(_elbo_value(A, b, q, m0, v0, r, x, mus, sigs))
        if trace[-1] - trace[-2] < tol:
            break
    return mus, sigs, trace


def elbo(graph, model, episode: ObsEpisode, **kw) -> float:
    """Evidence lower bound with the VI-optimal mean-field posterior."""
    _, _, trace = fit_posterior(graph, model, episode, **kw)
    val = trace[-1]
    if not np.isfinite(val):
        raise FloatingPointError("ELBO evaluation produced a non-finite value")
    return val


# ---------------------------------------------------------------------------
# structure learning (penalized exhaustive / greedy search)
# ---------------------------------------------------------------------------


@dataclass
class LatentEpisode:
    """Recorded latent trajectory from one environment (0 = observational)."""

    z: np.ndarray  # (T, D)
    env: int = 0


def _regress_ll(xs, ys):
    """Max-likelihood Gaussian linear regression; returns (ll, n_params)."""
    n = ys.shape[0]
    feats = np.hstack([xs, np.ones((n, 1))])
    coef, *_ = np.linalg.lstsq(feats, ys, rcond=None)
    resid = ys - feats @ coef
    var = max(float(resid @ resid) / n, _VAR_FLOOR)
    ll = -0.5 * n * (np.log(2 * np.pi * var) + 1.0)
    return ll, feats.shape[1] + 1, coef, var


class _NodeScorer:
    """Caches per-node penalized scores over parent sets and env assignments."""

    def __init__(self, episodes, lambda_i):
        self.lambda_i = lambda_i
        self.envs = sorted({ep.env for ep in episodes})
        self.by_env = {
            e: (
                np.vstack([ep.z[:-1] for ep in episodes if ep.env == e]),
                np.vstack([ep.z[1:] for ep in episodes if ep.env == e]),
            )
            for e in self.envs
        }
        self.free_envs = [e for e in self.envs if e != 0]
        self._cache = {}

    def score(self, node, parents):
        key = (node, parents)
        if key in self._cache:
            return self._cache[key]
        pa = sorted(parents)
        best = None
        for mask in range(1 << len(self.free_envs)):
            intervened = {self.free_envs[j] for j in range(len(self.free_envs)) if mask >> j & 1}
            obs_envs = [e for e in self.envs if e not in intervened]
            xs = np.vstack([self.by_env[e][0][:, pa] for e in obs_envs])
            ys = np.concatenate([self.by_env[e][1][:, node] for e in obs_envs])
            ll, k, _, _ = _regress_ll(xs, ys)
            total = ll - 0.5 * np.log(len(ys)) * k
            for e in intervened:
                xe, ye = self.by_env[e][0][:, pa], self.by_env[e][1][:, node]
                ll_e, k_e, _, _ = _regress_ll(xe, ye)
                total += ll_e - 0.5 * np.log(len(ye)) * k_e - self.lambda_i
            if best is None or total > best[0]:
                best = (total, frozenset(intervened))
        self._cache[key] = best
        return best

    def fit_params(self, node, parents, intervened_envs):
        """Fitted observational and interventional conditionals for a node."""
        pa = sorted(parents)
        d = self.by_env[self.envs[0]][0].shape[1]
        obs_envs = [e for e in self.envs if e not in intervened_envs]
        xs = np.vstack([self.by_env[e][0][:, pa] for e in obs_envs])
        ys = np.concatenate([self.by_env[e][1][:, node] for e in obs_envs])
        _, _, coef, var = _regress_ll(xs, ys)
        w = np.zeros(d)
        w[pa] = coef[:-1]
        obs = NodeTransition(weights=w, bias=float(coef[-1]), noise_var=var)
        if intervened_envs:
            e = sorted(intervened_envs)[0]
            xe, ye = self.by_env[e][0][:, pa], self.by_env[e][1][:, node]
            _, _, coef_i, var_i = _regress_ll(xe, ye)
            wi = np.zeros(d)
            wi[pa] = coef_i[:-1]
            intv = NodeTransition(weights=wi, bias=float(coef_i[-1]), noise_var=var_i)
        else:
            intv = make_intervened(obs)
        return obs, intv


def _all_dags(d):
    slots = [(i, j) for i in range(d) for j in range(d) if i != j]
    for mask in range(1 << len(slots)):
        adj = np.zeros((d, d), dtype=np.int8)
        for bit, (i, j) in enumerate(slots):
            if mask >> bit & 1:
                adj[i, j] = 1
        if is_dag(adj):
            yield adj


def _graph_score(adj, scorer, lambda_g):
    total = -lambda_g * float(adj.sum())
    assignment = {}
    d = adj.shape[0]
    for node in range(d):
        parents = frozenset(np.flatnonzero(adj[:, node]).tolist())
        s, intervened = scorer.score(node, parents)
        total += s
        assignment[node] = intervened
    return total, assignment


def learn_structure(episodes, lambda_g: float = 1.0, lambda_i: float = 1.0):
    """Recover the DAG, intervention targets and transition parameters.

    Exhaustive over DAGs for D <= 4, hill climbing (add/remove/reverse) for
    4 < D <= 6.  Scores are per-node penalized Gaussian regressions with a
    BIC parameter cost plus the per-edge / per-target penalties.
    Returns (CausalGraphModel, TransitionModel).
    """
    if not episodes:
        raise ValueError("need at least one episode")
    d = episodes[0].z.shape[1]
    if d > MAX_GREEDY_NODES:
        raise ValueError(
            f"structure search supports up to {MAX_GREEDY_NODES} nodes; "
            "use the neural trainer for larger graphs"
        )
    scorer = _NodeScorer(episodes, lambda_i)

    if d <= MAX_EXACT_NODES:
        best_adj, best_val, best_asgn = None, -np.inf, None
        for adj in _all_dags(d):
            val, asgn = _graph_score(adj, scorer, lambda_g)
            if val > best_val:
                best_adj, best_val, best_asgn = adj.copy(), val, asgn
    else:
        best_adj = np.zeros((d, d), dtype=np.int8)
        best_val, best_asgn = _graph_score(best_adj, scorer, lambda_g)
        improved = True
        while improved:
            improved = False
            for i in range(d):
                for j in range(d):
                    if i == j:
                        continue
                    for candidate in _neighbor_moves(best_adj, i, j):
                        if candidate is None or not is_dag(candidate):
                            continue
                        val, asgn = _graph_score(candidate, scorer, lambda_g)
                        if val > best_val + 1e-12:
                            best_adj, best_val, best_asgn = candidate, val, asgn
                            improved = True

    # intervention targets: nodes intervened in at least one environment
    targets = tuple(sorted(n for n, envs in best_asgn.items() if envs))
    obs_nodes, intv_nodes = [], []
    for node in range(d):
        parents = frozenset(np.flatnonzero(best_adj[:, node]).tolist())
        o, iv = scorer.fit_params(node, parents, best_asgn[node])
        obs_nodes.append(o)
        intv_nodes.append(iv)

    edge_probs = _edge_probabilities(best_adj, scorer, lambda_g)
    target_probs = _target_probabilities(best_adj, scorer, best_asgn)
    graph = CausalGraphModel(
        adjacency=best_adj,
        intervention_targets=targets,
        edge_probs=edge_probs,
        target_probs=target_probs,
    )
    return graph, TransitionModel(observational=obs_nodes, interventional=intv_nodes)


def _neighbor_moves(adj, i, j):
    add = adj.copy()
    if adj[i, j] == 0:
        add[i, j] = 1
        yield add
    rem = adj.copy()
    if adj[i, j] == 1:
        rem[i, j] = 0
        yield rem
        rev = adj.copy()
        rev[i, j], rev[j, i] = 0, 1
        yield rev


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _edge_probabilities(adj, scorer, lambda_g):
    """Relaxed-Bernoulli edge beliefs from local score gaps."""
    d = adj.shape[0]
    probs = np.zeros((d, d))
    for j in range(d):
        parents = frozenset(np.flatnonzero(adj[:, j]).tolist())
        base, _ = scorer.score(j, parents)
        for i in range(d):
            if i == j:
                continue
            alt = parents | {i} if i not in parents else parents - {i}
            alt_score, _ = scorer.score(j, alt)
            gap = (base - alt_score) if i in parents else (alt_score - base)
            probs[i, j] = _sigmoid(gap - lambda_g)
    return probs


def _target_probabilities(adj, scorer, assignment):
    d = adj.shape[0]
    probs = np.zeros(d)
    for node in range(d):
        parents = frozenset(np.flatnonzero(adj[:, node]).tolist())
        score_with, envs = scorer.score(node, parents)
        if envs:
            probs[node] = _sigmoid(1.0 + len(envs))
        else:
            probs[node] = _sigmoid(-1.0)
    return probs


# ---------------------------------------------------------------------------
# model exchange (cgm-model/v1)
# ---------------------------------------------------------------------------


@dataclass
class CgmBundle:
    graph: CausalGraphModel
    transitions: TransitionModel
    codebook: BeamCodebook
    column_posteriors: np.ndarray  # (D, C)
    initial_mean: np.ndarray
    initial_var: np.ndarray


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, str):
        import json as _json

        return _json.dumps(value)
    if value is None:
        return "null"
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        items = ", ".join(f"{_fmt(str(k))}: {_fmt(v)}" for k, v in value.items())
        return "{" + items + "}"
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_model(bundle: CgmBundle) -> str:
    """Serialize to the versioned exchange format (17 significant digits)."""
    cb = bundle.codebook
    if cb.kind == "dft":
        codebook = {"kind": "dft", "size": cb.size, "antennas": cb.codewords.shape[1]}
    else:
        codebook = {
            "kind": "explicit",
            "real": np.real(cb.codewords),
            "imag": np.imag(cb.codewords),
        }
    doc = {
        "schema": MODEL_SCHEMA,
        "dimension": bundle.graph.dim,
        "adjacency": bundle.graph.adjacency.astype(int),
        "intervention_targets": list(bundle.graph.intervention_targets),
        "nodes": [
            {
                "weights": o.weights,
                "bias": o.bias,
                "noise_var": o.noise_var,
                "intervened": {
                    "weights": iv.weights,
                    "bias": iv.bias,
                    "noise_var": iv.noise_var,
                },
            }
            for o, iv in zip(bundle.transitions.observational, bundle.transitions.interventional)
        ],
        "initial_state": {"mean": bundle.initial_mean, "var": bundle.initial_var},
        "codebook": codebook,
        "column_posteriors": bundle.column_posteriors,
    }
    return _fmt(doc)


def save_model(bundle: CgmBundle, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(bundle))
        fh.write("\n")


def load_trained_model(path) -> CgmBundle:
    """Load and validate a cgm-model/v1 file.

    Rejects schema mismatches, cyclic graphs, shape errors and
    non-normalized codeword posteriors.
    """
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"expected schema {MODEL_SCHEMA!r}, got {doc.get('schema')!r}")
    d = int(doc["dimension"])
    adj = np.asarray(doc["adjacency"], dtype=np.int8)
    if adj.shape != (d, d):
        raise ValueError("adjacency shape does not match dimension")
    if not is_dag(adj):
        raise ValueError("adjacency matrix contains a cycle")
    targets = tuple(int(t) for t in doc.get("intervention_targets", []))
    nodes = doc["nodes"]
    if len(nodes) != d:
        raise ValueError("node parameter count does not match dimension")
    obs, intv = [], []
    for n in nodes:
        w = np.asarray(n["weights"], dtype=np.float64)
        if w.shape != (d,):
            raise ValueError("node weight vector has wrong length")
        obs.append(NodeTransition(weights=w, bias=float(n["bias"]), noise_var=float(n["noise_var"])))
        ni = n["intervened"]
        intv.append(
            NodeTransition(
                weights=np.asarray(ni["weights"], dtype=np.float64),
                bias=float(ni["bias"]),
                noise_var=float(ni["noise_var"]),
            )
        )
    cb_doc = doc["codebook"]
    if cb_doc["kind"] == "dft":
        codebook = BeamCodebook.dft(int(cb_doc["antennas"]), int(cb_doc["size"]))
    else:
        cw = np.asarray(cb_doc["real"], float) + 1j * np.asarray(cb_doc["imag"], float)
        codebook = BeamCodebook(codewords=cw)
    post = np.asarray(doc["column_posteriors"], dtype=np.float64)
    if post.shape != (d, codebook.size):
        raise ValueError("column posterior table shape mismatch")
    sums = post.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(post < -1e-12):
        raise ValueError("column posteriors must be normalized probability tables")
    post = np.maximum(post, 0.0)
    post /= post.sum(axis=1, keepdims=True)
    init = doc["initial_state"]
    graph = CausalGraphModel(adjacency=adj, intervention_targets=targets)
    return CgmBundle(
        graph=graph,
        transitions=TransitionModel(observational=obs, interventional=intv),
        codebook=codebook,
        column_posteriors=post,
        initial_mean=np.asarray(init["mean"], float),
        initial_var=np.asarray(init["var"], float),
    )
