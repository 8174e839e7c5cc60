"""Experiment orchestration: seeded sweeps over (scheme, K, seed) cells,
episode export for the neural trainer, and CSV/JSON summaries.

All schemes inside one (K, seed) cell consume identical channel, content and
noise streams (common random numbers), so per-seed scheme deltas are paired.
Runs are fully deterministic given the config.
"""

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from thzsim.array_channel import (
    ArrayGeometry,
    ThzLinkConfig,
    UserChannelProcess,
    estimate_channel,
)
from thzsim.baselines import DftTracker, SchemeKind, naive_zf
from thzsim.causal_dynamics import (
    BeamCodebook,
    StaticPredictor,
    chain_graph,
    er_dag,
    random_transitions,
    sample_transition,
)
from thzsim.gev_beamformer import SolverProblem
from thzsim.maxmin_semantics import evaluate_transmission, full_pipeline_step
from thzsim.semantic_metrics import SemanticScorer, SemanticThresholds

CONFIG_SCHEMA = "thzsim-config/v1"
EPISODE_SCHEMA = "episodes/v1"

RECORD_FIELDS = [
    "scheme",
    "num_users",
    "seed",
    "step",
    "user",
    "semantic_info",
    "min_semantic_info",
    "reliability",
    "distortion",
    "convergence_iters",
]


class ConfigError(ValueError):
    """Carries every validation failure at once."""

    def __init__(self, problems):
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = list(problems)


@dataclass
class ExperimentConfig:
    # arrays and link (Table-style defaults; carrier must stay in-band)
    num_bs_antennas: int = 16
    num_ue_antennas: int = 4
    dim: int = 2
    carrier_freq: float = 300e9
    distance: float = 20.0
    absorption_coeff: float = 0.0033
    tx_gain_dbi: float = 20.0
    rx_gain_dbi: float = 20.0
    bandwidth: float = 1e9
    noise_power_dbm: float = -75.0
    num_nlos_paths: int = 3
    speed_kmh: float = 90.0
    slot_period: float = 5e-5
    pilot_snr_db: float = 15.0
    aging_rho: float = 0.9
    power_w: float = 1e-3
    # semantics
    delta: float = 0.25
    epsilon: float = 0.25
    lam: float = 1.0  # weight on the instantaneous beam part
    beta: float = 0.8  # weight on the instantaneous state part
    z_cap: float = 1.0
    n_candidates: int = 12
    candidate_spread: float = 0.25
    # dynamics
    er_edge_prob: float = 0.3
    forgetting: float = 0.9
    posterior_temp: float = 4.0
    content_noise_std: float = 0.35
    content_weight: float = 0.65
    content_bias: float = 0.4
    intervention_shift: float = 2.0
    obs_noise_var: float = 0.01
    # experiment protocol
    schemes: tuple = ("proposed", "dft_tracking", "naive_zf", "perfect_csi")
    users: tuple = (2, 4, 6)
    seeds: tuple = tuple(range(20))
    steps: int = 24
    warmup: int = 8
    noise_draws: int = 12
    rounds: int = 2
    tol_alpha: float = 0.05
    solver_max_outer: int = 8
    solver_tol: float = 1e-4
    feas_iters: int = 300
    polish_iters: int = 200
    tracking_window: int = 2
    codebook_size: int | None = None
    # episode export
    export_envs: int = 0  # number of intervened environments
    export_targets: tuple = ()
    export_structure: str = "er"  # "er" or "chain" ground-truth graph
    base_entropy: int = 20260801

    @property
    def noise_var(self) -> float:
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    @property
    def tx_gain_lin(self) -> float:
        return 10.0 ** (self.tx_gain_dbi / 10.0)

    @property
    def rx_gain_lin(self) -> float:
        return 10.0 ** (self.rx_gain_dbi / 10.0)

    @property
    def speed_ms(self) -> float:
        return self.speed_kmh / 3.6

    def validate(self):
        problems = []
        if not (300e9 <= self.carrier_freq <= 450e9):
            problems.append("carrier_freq must lie in [300 GHz, 450 GHz]")
        if self.num_bs_antennas < 1 or self.num_ue_antennas < 1:
            problems.append("antenna counts must be >= 1")
        if self.dim > min(self.num_bs_antennas, self.num_ue_antennas):
            problems.append("dim must satisfy dim <= min(M, N)")
        if self.dim < 1:
            problems.append("dim must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            problems.append("lam must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            problems.append("beta must lie in [0, 1]")
        if self.delta <= 0:
            problems.append("delta must be positive")
        if not 0.0 < self.epsilon < 1.0:
            problems.append("epsilon must lie in (0, 1)")
        if not 0.0 <= self.aging_rho <= 1.0:
            problems.append("aging_rho must lie in [0, 1]")
        if self.steps < 1:
            problems.append("steps must be >= 1")
        if self.noise_draws < 1:
            problems.append("noise_draws must be >= 1")
        for s in self.schemes:
            try:
                SchemeKind(s)
            except ValueError:
                problems.append(f"unknown scheme {s!r}")
        if any(k < 1 for k in self.users):
            problems.append("user counts must be >= 1")
        if any(k * self.dim > self.num_bs_antennas for k in self.users):
            problems.append("largest K needs K*dim <= M (zero-forcing feasibility)")
        if self.export_envs < 0:
            problems.append("export_envs must be >= 0")
        if any(t < 0 or t >= self.dim for t in self.export_targets):
            problems.append("export_targets must index state coordinates")
        if self.export_structure not in ("er", "chain"):
            problems.append("export_structure must be 'er' or 'chain'")
        if problems:
            raise ConfigError(problems)
        return self

    def link_config(self) -> ThzLinkConfig:
        return ThzLinkConfig(
            carrier_freq=self.carrier_freq,
            distance=self.distance,
            absorption_coeff=self.absorption_coeff,
            tx_gain=self.tx_gain_lin,
            rx_gain=self.rx_gain_lin,
            num_nlos_paths=self.num_nlos_paths,
            noise_variance=self.noise_var,
        )

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.num_bs_antennas, self.num_ue_antennas)

    def thresholds(self) -> SemanticThresholds:
        return SemanticThresholds(self.delta, self.epsilon)


def desk_preset(**overrides) -> ExperimentConfig:
    return ExperimentConfig(**overrides).validate()


def paper_preset(**overrides) -> ExperimentConfig:
    base = dict(
        num_bs_antennas=64,
        num_ue_antennas=4,
        dim=4,
        users=(2, 4, 6, 8),
        steps=100,
        seeds=tuple(range(20)),
    )
    base.update(overrides)
    return ExperimentConfig(**base).validate()


@dataclass
class ExperimentRecord:
    scheme: str
    num_users: int
    seed: int
    step: int
    user: int  # -1 for the per-step aggregate row
    semantic_info: float
    min_semantic_info: float
    reliability: float
    distortion: float
    convergence_iters: int

    def row(self):
        return [
            self.scheme,
            str(self.num_users),
            str(self.seed),
            str(self.step),
            str(self.user),
            format(self.semantic_info, ".17g"),
            format(self.min_semantic_info, ".17g"),
            format(self.reliability, ".17g"),
            format(self.distortion, ".17g"),
            str(self.convergence_iters),
        ]


# ---------------------------------------------------------------------------
# per-cell episode state (shared across schemes through common random numbers)
# ---------------------------------------------------------------------------


@dataclass
class _CellStreams:
    """Deterministic per-(K, seed) random state, identical for every scheme."""

    paths_ss: np.random.SeedSequence
    content_ss: np.random.SeedSequence
    step_ss: list  # per step: dict of named SeedSequences

    @classmethod
    def create(cls, cfg: ExperimentConfig, num_users: int, seed: int):
        root = np.random.SeedSequence([cfg.base_entropy, num_users, seed])
        paths_ss, content_ss, pool = root.spawn(3)
        total = cfg.warmup + cfg.steps
        step_children = pool.spawn(total)
        step_ss = []
        for child in step_children:
            est, tx, cand = child.spawn(3)
            step_ss.append({"est": est, "tx": tx, "cand": cand})
        return cls(paths_ss=paths_ss, content_ss=content_ss, step_ss=step_ss)


class _Cell:
    """Everything one (K, seed) cell shares across schemes."""

    def __init__(self, cfg: ExperimentConfig, num_users: int, seed: int):
        self.cfg = cfg
        self.K = num_users
        self.seed = seed
        self.streams = _CellStreams.create(cfg, num_users, seed)
        geometry = cfg.geometry()
        link = cfg.link_config()
        rng_paths = np.random.default_rng(self.streams.paths_ss)
        self.processes = [
            UserChannelProcess.create(link, geometry, rng_paths, speed=cfg.speed_ms)
            for _ in range(num_users)
        ]
        rng_content = np.random.default_rng(self.streams.content_ss)
        self.graph = er_dag(cfg.dim, cfg.er_edge_prob, rng_content)
        self.transitions = random_transitions(
            self.graph,
            rng_content,
            weight_range=(0.4, cfg.content_weight + 0.15),
            noise_std=cfg.content_noise_std,
            shift_sigmas=cfg.intervention_shift,
            bias_scale=cfg.content_bias,
        )
        total = cfg.warmup + cfg.steps
        self.content = np.zeros((total + 1, num_users, cfg.dim))
        self.content[0] = cfg.content_noise_std * rng_content.standard_normal((num_users, cfg.dim))
        for t in range(total):
            for k in range(num_users):
                self.content[t + 1, k] = sample_transition(
                    self.graph, self.transitions, self.content[t, k], rng_content
                )
        # precompute true channels and shared estimation noise per step
        N, M = cfg.num_ue_antennas, cfg.num_bs_antennas
        self.true_channels = np.zeros((total, num_users, N, M), dtype=np.complex128)
        self.estimates = np.zeros_like(self.true_channels)
        self.err_vars = np.zeros((total, num_users))
        for t in range(total):
            rng_est = np.random.default_rng(self.streams.step_ss[t]["est"])
            for k in range(num_users):
                H = self.processes[k].snapshot(t * cfg.slot_period)
                self.true_channels[t, k] = H
                real = estimate_channel(H, cfg.pilot_snr_db, cfg.aging_rho, rng_est, t)
                self.estimates[t, k] = real.estimate
                self.err_vars[t, k] = real.error_variance

    def noise_draws(self, t: int) -> np.ndarray:
        cfg = self.cfg
        rng = np.random.default_rng(self.streams.step_ss[t]["tx"])
        shape = (self.K, cfg.noise_draws, cfg.num_ue_antennas)
        draws = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        return draws * np.sqrt(cfg.noise_var / 2.0)

    def cand_rng(self, t: int) -> np.random.Generator:
        return np.random.default_rng(self.streams.step_ss[t]["cand"])


def _design_weights(cfg, scorers, priors, rng):
    """A-priori per-user weight sums (no received signal at design time)."""
    K = len(scorers)
    w = np.zeros(K)
    for k in range(K):
        cands = scorers[k].sample_candidates(priors[k], rng)
        src = np.array([scorers[k].source_information(c) for c in cands])
        diffs = cands[:, None, :] - cands[None, :, :]
        sim = np.exp(-np.sum(diffs**2, axis=2) / (2.0 * scorers[k].delta))
        w[k] = float(np.mean(src * sim.mean(axis=0)))
    return np.maximum(w, 1e-6)


def run_cell(cfg: ExperimentConfig, scheme: str, num_users: int, seed: int, cell: _Cell | None = None):
    """Run one (scheme, K, seed) episode; returns (records, step_samples)."""
    scheme = SchemeKind(scheme)
    cell = cell or _Cell(cfg, num_users, seed)
    K, D = num_users, cfg.dim
    thresholds = cfg.thresholds()
    powers = np.full(K, cfg.power_w)
    codebook = BeamCodebook.dft(cfg.num_bs_antennas, cfg.codebook_size)
    statics_on = scheme == SchemeKind.PROPOSED and (cfg.lam < 1.0 or cfg.beta < 1.0)
    predictors = [
        StaticPredictor(
            cell.graph, cell.transitions, codebook, D,
            forgetting=cfg.forgetting, prior_var=cfg.z_cap**2 / D,
            alignment_temp=cfg.posterior_temp,
        )
        for _ in range(K)
    ]
    tracker = DftTracker.create(
        cfg.num_bs_antennas, D, K, window=cfg.tracking_window, codebook_size=cfg.codebook_size
    ) if scheme == SchemeKind.DFT_TRACKING else None

    records = []
    all_samples = []
    total = cfg.warmup + cfg.steps
    for t in range(total):
        H_true = cell.true_channels[t]
        H_est = cell.estimates[t]
        for k in range(K):
            predictors[k].update(cell.content[t, k], H_est[k])
        if t < cfg.warmup:
            continue
        step = t - cfg.warmup
        snapshots = [p.snapshot() for p in predictors]
        prior_means = np.stack([s.z_mean for s in snapshots])
        prior_covs = np.stack([s.z_cov for s in snapshots])
        scorers = [
            SemanticScorer(
                delta=cfg.delta,
                source_information=snapshots[k].source_information,
                n_candidates=cfg.n_candidates,
                spread=cfg.candidate_spread,
            )
            for k in range(K)
        ]
        noise_draws = cell.noise_draws(t)
        cand_rng = cell.cand_rng(t)
        weights = _design_weights(cfg, scorers, prior_means, cand_rng)

        conv_iters = 0
        if scheme in (SchemeKind.PROPOSED, SchemeKind.PERFECT_CSI):
            perfect = scheme == SchemeKind.PERFECT_CSI
            channels = H_true if perfect else H_est
            # the perfect-CSI benchmark keeps a purely instantaneous beam
            # part but shares the causal state statics with the proposed
            # scheme, so the only difference is exact channel knowledge
            use_statics = (statics_on or perfect) and (cfg.lam < 1.0 or cfg.beta < 1.0)
            # estimate-error diagonal loading: robust beams under aging
            load = 0.0 if perfect else float(
                np.mean(powers) * cell.err_vars[t].mean()
                * max(np.sum(np.linalg.norm(prior_means, axis=1) ** 2), 1.0) / D
            )
            problem = SolverProblem(
                channels=channels,
                states=prior_means.copy(),
                noise_var=cfg.noise_var,
                weights=weights,
                powers=powers,
                diag_load=load,
                static_beams=np.stack([s.static_beam for s in snapshots]) if use_statics else None,
                static_weight=(1.0 - (1.0 if perfect else cfg.lam)) if use_statics else 0.0,
                col_covs=[s.col_covs for s in snapshots] if use_statics else None,
                m2=[s.m2 for s in snapshots] if use_statics else None,
                mixing=(1.0 if perfect else cfg.lam) if use_statics else 1.0,
            )
            result = full_pipeline_step(
                problem,
                thresholds,
                H_true,
                static_states=prior_means if use_statics else None,
                pred_covs=prior_covs if use_statics else None,
                beta=cfg.beta if use_statics else 1.0,
                cap=cfg.z_cap,
                scorers=scorers,
                rounds=cfg.rounds,
                tol_alpha=cfg.tol_alpha,
                noise_draws=noise_draws,
                cand_rng=cand_rng,
                est_error_vars=None if perfect else cell.err_vars[t],
                solver_opts={"max_outer": cfg.solver_max_outer, "tol": cfg.solver_tol},
                feas_opts={"n_iter": cfg.feas_iters, "polish_iter": cfg.polish_iters},
            )
            info, rel, dist = result.semantic_info, result.reliability, result.distortion
            samples = result.samples
            conv_iters = result.convergence_iterations
        else:
            if scheme == SchemeKind.DFT_TRACKING:
                beams, combs, _ = tracker.step(H_est)
            else:  # naive ZF on one-slot-stale estimates (no Doppler progression)
                stale = cell.estimates[max(t - 1, 0)]
                beams, combs = naive_zf(stale, cell.content[t], powers=powers, dim=D)
            z_tx = cell.content[t].copy()
            for k in range(K):
                nrm = np.linalg.norm(z_tx[k])
                if nrm > cfg.z_cap:
                    z_tx[k] *= cfg.z_cap / nrm
            mixed = beams.all_mixed()
            info, rel, dist, samples = evaluate_transmission(
                H_true, mixed, combs, z_tx, cfg.noise_var, powers,
                prior_means, prior_covs, scorers, noise_draws, cand_rng,
                delta=cfg.delta,
            )
        for k in range(K):
            records.append(
                ExperimentRecord(
                    scheme=scheme.value, num_users=K, seed=seed, step=step, user=k,
                    semantic_info=float(info[k]), min_semantic_info=float(info.min()),
                    reliability=float(rel[k]), distortion=float(dist[k]),
                    convergence_iters=conv_iters,
                )
            )
        records.append(
            ExperimentRecord(
                scheme=scheme.value, num_users=K, seed=seed, step=step, user=-1,
                semantic_info=float(info.mean()), min_semantic_info=float(info.min()),
                reliability=float(rel.mean()), distortion=float(dist.mean()),
                convergence_iters=conv_iters,
            )
        )
        all_samples.append(samples)
    return records, all_samples


def run_experiment(cfg: ExperimentConfig, progress=None):
    """Full sweep; yields (records, timing rows).  Deterministic per config."""
    cfg.validate()
    records = []
    timings = []
    for num_users in cfg.users:
        for seed in cfg.seeds:
            cell = _Cell(cfg, num_users, seed)
            for scheme in cfg.schemes:
                t0 = time.perf_counter()
                recs, _ = run_cell(cfg, scheme, num_users, seed, cell=cell)
                dt = time.perf_counter() - t0
                records.extend(recs)
                timings.append((scheme, num_users, seed, dt))
                if progress:
                    progress(scheme, num_users, seed, dt)
    return records, timings


def write_records_csv(records, path):
    lines = [",".join(RECORD_FIELDS)]
    lines.extend(",".join(r.row()) for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def write_timings_csv(timings, path):
    lines = ["scheme,num_users,seed,wall_time_s"]
    lines.extend(f"{s},{k},{seed},{dt:.6f}" for s, k, seed, dt in timings)
    Path(path).write_text("\n".join(lines) + "\n")


def summarize(records):
    """Per-(scheme, K) means with 95% t-interval halfwidths.

    Aggregate rows (user = -1) feed the reliability / min-info columns; the
    result list is ordered by mean min-user semantic information, descending.
    """
    groups = {}
    for r in records:
        if r.user != -1:
            continue
        groups.setdefault((r.scheme, r.num_users), []).append(r)
    out = []
    for (scheme, k), rows in groups.items():
        per_seed = {}
        for r in rows:
            per_seed.setdefault(r.seed, []).append(r)
        seed_min = np.array([np.mean([x.min_semantic_info for x in v]) for v in per_seed.values()])
        seed_rel = np.array([np.mean([x.reliability for x in v]) for v in per_seed.values()])
        seed_inf = np.array([np.mean([x.semantic_info for x in v]) for v in per_seed.values()])
        seed_dis = np.array([np.mean([x.distortion for x in v]) for v in per_seed.values()])

        def _ci(vals):
            n = len(vals)
            if n < 2:
                return 0.0
            return float(scipy_stats.t.ppf(0.975, n - 1) * np.std(vals, ddof=1) / np.sqrt(n))

        out.append(
            {
                "scheme": scheme,
                "num_users": k,
                "n_seeds": len(per_seed),
                "min_semantic_info_mean": float(seed_min.mean()),
                "min_semantic_info_ci95": _ci(seed_min),
                "semantic_info_mean": float(seed_inf.mean()),
                "semantic_info_ci95": _ci(seed_inf),
                "reliability_mean": float(seed_rel.mean()),
                "reliability_ci95": _ci(seed_rel),
                "distortion_mean": float(seed_dis.mean()),
                "distortion_ci95": _ci(seed_dis),
            }
        )
    out.sort(key=lambda d: (-d["min_semantic_info_mean"], d["scheme"], d["num_users"]))
    return out


def write_summary(summary, csv_path, json_path):
    cols = list(summary[0].keys()) if summary else ["scheme", "num_users"]
    lines = [",".join(cols)]
    for row in summary:
        lines.append(
            ",".join(
                format(row[c], ".17g") if isinstance(row[c], float) else str(row[c]) for c in cols
            )
        )
    Path(csv_path).write_text("\n".join(lines) + "\n")
    Path(json_path).write_text(json.dumps(summary, indent=2) + "\n")


# ---------------------------------------------------------------------------
# episode dataset export (episodes/v1)
# ---------------------------------------------------------------------------


def _write_array(directory: Path, name: str, arr: np.ndarray):
    arr = np.ascontiguousarray(arr)
    fname = f"{name}.bin"
    if np.iscomplexobj(arr):
        arr.astype(np.complex128).view(np.float64).tofile(directory / fname)
        dtype, layout = "complex128", "interleaved_real_imag"
    else:
        arr.astype(np.float64).tofile(directory / fname)
        dtype, layout = "float64", "c_order"
    return {"name": name, "file": fname, "shape": list(arr.shape), "dtype": dtype, "layout": layout}


def export_episodes(cfg: ExperimentConfig, path, num_users: int = 1):
    """Write (X, Y, Z, V, W, H) sequences for the observational environment
    plus ``cfg.export_envs`` intervened environments in episodes/v1 layout.

    Beams are matched-filter (dominant singular vector) transmissions of the
    content states; the trainer consumes the dataset purely through the
    manifest and binary blobs.
    """
    cfg.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    env_entries = []
    targets = tuple(cfg.export_targets)
    for env in range(cfg.export_envs + 1):
        env_dir = root / f"env_{env:03d}"
        env_dir.mkdir(exist_ok=True)
        intervened = frozenset() if env == 0 else frozenset(targets)
        arrays = _simulate_episode_arrays(cfg, num_users, env, intervened)
        manifest = {
            "schema": EPISODE_SCHEMA,
            "env_index": env,
            "intervened_nodes": sorted(intervened),
            "adjacency": None,
            "arrays": [],
        }
        manifest["adjacency"] = arrays.pop("_adjacency")
        for name, arr in arrays.items():
            manifest["arrays"].append(_write_array(env_dir, name, arr))
        (env_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        env_entries.append({"env_index": env, "path": env_dir.name,
                            "intervened_nodes": sorted(intervened)})
    top = {"schema": EPISODE_SCHEMA, "num_environments": cfg.export_envs + 1,
           "environments": env_entries}
    (root / "manifest.json").write_text(json.dumps(top, indent=2) + "\n")
    return root


def _simulate_episode_arrays(cfg, num_users, env, intervened):
    K, D = num_users, cfg.dim
    N, M = cfg.num_ue_antennas, cfg.num_bs_antennas
    T = cfg.steps
    root = np.random.SeedSequence([cfg.base_entropy, 7000 + env, K])
    paths_ss, content_ss, noise_ss = root.spawn(3)
    rng_content = np.random.default_rng(content_ss)
    # one shared ground-truth structure across environments
    rng_struct = np.random.default_rng(np.random.SeedSequence([cfg.base_entropy, 7777]))
    if cfg.export_structure == "chain":
        graph = chain_graph(D)
    else:
        graph = er_dag(D, cfg.er_edge_prob, rng_struct)
    transitions = random_transitions(
        graph, rng_struct, weight_range=(0.4, cfg.content_weight + 0.15),
        noise_std=cfg.content_noise_std, shift_sigmas=cfg.intervention_shift,
        bias_scale=cfg.content_bias,
    )
    link = cfg.link_config()
    geometry = cfg.geometry()
    rng_paths = np.random.default_rng(paths_ss)
    processes = [UserChannelProcess.create(link, geometry, rng_paths, speed=cfg.speed_ms)
                 for _ in range(K)]
    rng_noise = np.random.default_rng(noise_ss)
    X = np.zeros((T, K, D))
    Z = np.zeros((T, K, D))
    Y = np.zeros((T, K, D), dtype=np.complex128)
    V = np.zeros((T, K, M, D), dtype=np.complex128)
    Wc = np.zeros((T, K, N, D), dtype=np.complex128)
    H = np.zeros((T, K, N, M), dtype=np.complex128)
    z = cfg.content_noise_std * rng_content.standard_normal((K, D))
    for t in range(T):
        for k in range(K):
            z[k] = sample_transition(graph, transitions, z[k], rng_content, intervened)
            Z[t, k] = z[k]
            X[t, k] = z[k] + np.sqrt(cfg.obs_noise_var) * rng_content.standard_normal(D)
            Hk = processes[k].snapshot(t * cfg.slot_period)
            H[t, k] = Hk
            U, _, Vh = np.linalg.svd(Hk, full_matrices=False)
            for d in range(D):
                V[t, k, :, d] = Vh[d].conj()
                Wc[t, k, :, d] = U[:, d]
            V[t, k] /= np.linalg.norm(V[t, k])
            noise = (rng_noise.standard_normal(N) + 1j * rng_noise.standard_normal(N))
            noise *= np.sqrt(cfg.noise_var / 2.0)
            y = Wc[t, k].conj().T @ (np.sqrt(cfg.power_w) * (Hk @ V[t, k] @ z[k]) + noise)
            Y[t, k] = y
    return {
        "X": X, "Y": Y, "Z": Z, "V": V, "W": Wc, "H": H,
        "_adjacency": graph.adjacency.astype(int).tolist(),
    }


def load_episodes(path):
    """Round-trip loader for episodes/v1 directories."""
    root = Path(path)
    top = json.loads((root / "manifest.json").read_text())
    if top.get("schema") != EPISODE_SCHEMA:
        raise ValueError(f"expected schema {EPISODE_SCHEMA!r}")
    envs = []
    for entry in top["environments"]:
        env_dir = root / entry["path"]
        manifest = json.loads((env_dir / "manifest.json").read_text())
        arrays = {}
        for spec in manifest["arrays"]:
            raw = np.fromfile(env_dir / spec["file"], dtype=np.float64)
            if spec["dtype"] == "complex128":
                arr = raw.view(np.complex128).reshape(spec["shape"])
            else:
                arr = raw.reshape(spec["shape"])
            arrays[spec["name"]] = arr
        envs.append(
            {
                "env_index": manifest["env_index"],
                "intervened_nodes": manifest["intervened_nodes"],
                "adjacency": manifest["adjacency"],
                "arrays": arrays,
            }
        )
    return envs
