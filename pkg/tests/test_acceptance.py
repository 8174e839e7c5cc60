"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-3 share a single desk-scale sweep (M=16, N=4, D=2, 90 km/h,
K in {2, 4, 6}, 20 seeds) executed once per session; the remaining criteria
run self-contained oracles.
"""

import time

import numpy as np
import pytest
from scipy import stats

from thzsim.causal_dynamics import (
    BeamCodebook,
    LatentEpisode,
    StaticPredictor,
    chain_graph,
    er_dag,
    learn_structure,
    random_transitions,
    sample_transition,
)
from thzsim.gev_beamformer import (
    SolverProblem,
    alternating_solve,
    antenna_covariances,
    build_operands,
    surrogate_objective,
    update_beamformer,
)
from thzsim.maxmin_semantics import (
    bisect_maxmin,
    build_feasibility_context,
    feasibility,
)
from thzsim.semantic_metrics import SemanticScorer, SemanticThresholds, semantic_reliability
from thzsim.sim_harness import desk_preset, run_cell, run_experiment, write_records_csv, _Cell

SWEEP_BUDGET_S = 600.0


def _report(criterion: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {criterion}" + (f" :: {detail}" if detail else ""))
    return ok


@pytest.fixture(scope="module")
def sweep():
    """One full desk-scale sweep shared by criteria 1-3."""
    cfg = desk_preset(steps=20)
    t0 = time.perf_counter()
    records, timings = run_experiment(cfg)
    wall = time.perf_counter() - t0
    per = {}
    for r in records:
        if r.user != -1:
            continue
        per.setdefault((r.scheme, r.num_users, r.seed), []).append(r)
    agg = {
        key: (
            np.mean([x.reliability for x in v]),
            np.mean([x.semantic_info for x in v]),
            np.mean([x.min_semantic_info for x in v]),
        )
        for key, v in per.items()
    }
    return cfg, agg, wall, records


class TestCriterion1:
    def test_reliability_ordering(self, sweep):
        cfg, agg, wall, _ = sweep
        per_k_ok = True
        paired = []
        for K in cfg.users:
            prop = np.mean([agg[("proposed", K, s)][0] for s in cfg.seeds])
            dft = np.mean([agg[("dft_tracking", K, s)][0] for s in cfg.seeds])
            per_k_ok &= prop > dft
            paired.extend(
                (agg[("proposed", K, s)][0] - agg[("dft_tracking", K, s)][0])
                / max(agg[("dft_tracking", K, s)][0], 1e-9)
                for s in cfg.seeds
            )
        gain = float(np.mean(paired))
        ok = per_k_ok and gain >= 0.05 and wall <= SWEEP_BUDGET_S
        assert _report(
            "criterion 1: reliability ordering vs dft_tracking",
            ok,
            f"per-K ordering={per_k_ok}, paired gain={100 * gain:.1f}% (>=5%), "
            f"wall={wall:.0f}s (<= {SWEEP_BUDGET_S:.0f}s)",
        )

    def test_runtime_budget(self, sweep):
        _, _, wall, _ = sweep
        assert _report("criterion 1b: sweep runtime", wall <= SWEEP_BUDGET_S,
                       f"{wall:.0f}s")


class TestCriterion2:
    def test_information_ordering(self, sweep):
        cfg, agg, _, _ = sweep
        per_k_ok = True
        paired = []
        for K in cfg.users:
            prop = np.mean([agg[("proposed", K, s)][1] for s in cfg.seeds])
            dft = np.mean([agg[("dft_tracking", K, s)][1] for s in cfg.seeds])
            naive = np.mean([agg[("naive_zf", K, s)][1] for s in cfg.seeds])
            per_k_ok &= prop > dft and prop > naive
            paired.extend(
                (agg[("proposed", K, s)][1] - agg[("naive_zf", K, s)][1])
                / max(agg[("naive_zf", K, s)][1], 1e-9)
                for s in cfg.seeds
            )
        gain = float(np.mean(paired))
        ok = per_k_ok and gain >= 0.15
        assert _report(
            "criterion 2: received-information ordering",
            ok,
            f"per-K ordering={per_k_ok}, paired gain vs naive={100 * gain:.1f}% (>=15%)",
        )


class TestCriterion3:
    def test_upper_bound_sanity(self, sweep):
        cfg, agg, _, _ = sweep
        holds = []
        for K in cfg.users:
            for s in cfg.seeds:
                f = agg[("perfect_csi", K, s)][2]
                p = agg[("proposed", K, s)][2]
                n = agg[("naive_zf", K, s)][2]
                holds.append(f >= p >= n)
        frac = float(np.mean(holds))
        assert _report(
            "criterion 3: perfect_csi >= proposed >= naive_zf (min-user info)",
            frac >= 0.9,
            f"holds on {100 * frac:.1f}% of paired seeds (>=90%)",
        )


class TestCriterion4:
    def test_gev_oracle_equivalence(self):
        rng = np.random.default_rng(42)
        ok_obj = ok_resid = 0
        n_inst, n_cand = 100, 10_000
        for _ in range(n_inst):
            m = int(rng.integers(2, 5))
            H = (rng.standard_normal((2, 3, m)) + 1j * rng.standard_normal((2, 3, m))) / np.sqrt(2)
            z = rng.standard_normal((2, 1)) * 0.7
            prob = SolverProblem(channels=H, states=z, noise_var=0.1, weights=np.ones(2))
            V = np.stack([(rng.standard_normal((m, 1)) + 1j * rng.standard_normal((m, 1)))
                          for _ in range(2)])
            for k in range(2):
                V[k] /= np.linalg.norm(V[k])
            W = np.stack([
                np.linalg.qr(rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1)))[0]
                for _ in range(2)
            ])
            covs = antenna_covariances(prob, V)
            ops = build_operands(0, prob, V, W, covs)
            Vnew = update_beamformer(0, ops, 1)
            ours = surrogate_objective(ops, Vnew)
            cands = rng.standard_normal((n_cand, m)) + 1j * rng.standard_normal((n_cand, m))
            cands /= np.linalg.norm(cands, axis=1, keepdims=True)
            dim = ops.I_t.shape[0]
            ridge = 1e-9 * np.real(np.trace(ops.I_t)) / dim
            B = ops.I_t + ridge * np.eye(dim)
            num = np.real(np.einsum("nd,de,ne->n", cands.conj(), ops.S_t, cands))
            den = np.real(np.einsum("nd,de,ne->n", cands.conj(), B, cands))
            best = float((num / den).max())
            ok_obj += ours >= best * (1 - 1e-9)
            vec = Vnew.reshape(-1, order="F")
            mu = np.real(vec.conj() @ ops.S_t @ vec) / np.real(vec.conj() @ B @ vec)
            r = np.linalg.norm(ops.S_t @ vec - mu * (B @ vec))
            r /= np.linalg.norm(ops.S_t) + abs(mu) * np.linalg.norm(B)
            ok_resid += r <= 1e-6
        ok = ok_obj == n_inst and ok_resid == n_inst
        assert _report(
            "criterion 4: GEV beats 10^4 random candidates + stationarity",
            ok,
            f"objective {ok_obj}/{n_inst}, residual {ok_resid}/{n_inst}",
        )


def _solved_context(rng, K=2, N=4, M=8, D=2, noise=0.1, delta=10.0, eps=0.3):
    H = np.stack([(rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))) / np.sqrt(2)
                  for _ in range(K)])
    prob = SolverProblem(channels=H, states=0.5 * np.ones((K, D)), noise_var=noise,
                         weights=np.ones(K))
    beams, combs, _ = alternating_solve(prob, max_outer=6, tol=1e-6)
    th = SemanticThresholds(delta, eps)
    return build_feasibility_context(H, beams, combs, np.ones(K), noise, th, cap=1.0)


class TestCriterion5:
    def test_bisection_exactness(self):
        rng = np.random.default_rng(5)
        ctx = _solved_context(rng)
        count_ok = True
        for upper, tol in [(8.0, 0.25), (4.0, 0.5), (10.0, 0.1)]:
            _, _, iters = bisect_maxmin(ctx, tol_alpha=tol, alpha_upper=upper)
            count_ok &= iters == int(np.ceil(np.log2(upper / tol)))
        close = []
        for seed in range(5):
            r = np.random.default_rng(500 + seed)
            c1 = _solved_context(r, K=1)
            T = c1.Tdet[0, 0]
            lam = np.linalg.eigvalsh(np.real(T.conj().T @ T)).max()
            expected = c1.weights[0] * np.log(1.0 + c1.cap**2 * lam)
            _, alpha, _ = bisect_maxmin(c1, tol_alpha=1e-3, alpha_upper=expected * 1.1)
            close.append(abs(alpha - expected) <= 1e-3 + 1e-9)
        ok = count_ok and all(close)
        assert _report(
            "criterion 5: bisection iteration count + single-user optimum",
            ok,
            f"count exact={count_ok}, closed-form match {sum(close)}/5 at tol 1e-3",
        )


def _grid_best(ctx, n_grid=41):
    axis = np.linspace(-ctx.cap, ctx.cap, n_grid)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= ctx.cap]
    a = {(k, i): pts @ ctx.Tdet[k, i].T for k in range(2) for i in range(2)}

    def s_user(k, i):
        own = a[(k, k)]
        oth = a[(k, i)]
        own_pow = np.sum(np.abs(own) ** 2, axis=1)
        oth_pow = np.sum(np.abs(oth) ** 2, axis=1)
        cross = np.abs(own @ oth.conj().T) ** 2
        quad = own_pow[:, None] - cross / (1.0 + oth_pow[None, :])
        return ctx.weights[k] * np.log1p(quad)

    s1 = s_user(0, 1)
    s2 = s_user(1, 0).T
    return float(np.minimum(s1, s2).max())


class TestCriterion6:
    def test_grid_oracle_agreement(self):
        agree = total = 0
        for seed in range(20):
            rng = np.random.default_rng(600 + seed)
            ctx = _solved_context(rng, K=2, D=2)
            grid_opt = _grid_best(ctx)
            for rel in (-0.25, -0.15, -0.08, 0.08, 0.15, 0.25, -0.35, 0.35, -0.5, 0.5):
                alpha = grid_opt * (1.0 + rel)
                oracle = rel < 0
                got = feasibility(ctx, alpha).feasible
                agree += oracle == got
                total += 1
        frac = agree / total
        assert _report(
            "criterion 6: feasibility vs 41^2 grid oracle",
            frac >= 0.95,
            f"agreement {agree}/{total} ({100 * frac:.1f}%)",
        )


class TestCriterion7:
    def test_moment_monte_carlo(self):
        rng = np.random.default_rng(7)
        g = chain_graph(2)
        model = random_transitions(g, rng)
        cb = BeamCodebook.dft(8)
        pred = StaticPredictor(g, model, cb, 2, forgetting=0.9, alignment_temp=1.0)
        for _ in range(5):
            H = (rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))) / np.sqrt(2)
            pred.update(rng.standard_normal(2), H)
        snap = pred.snapshot()
        z = np.array([0.8, -0.5])
        n_mc = 100_000
        cw = cb.codewords
        mc_m2 = np.zeros((8, 8), dtype=complex)
        mc_z = np.zeros((8, 8), dtype=complex)
        for d in range(2):
            idx = rng.choice(cb.size, size=n_mc, p=snap.codeword_posterior[d])
            dev = cw[idx] - snap.col_means[:, d]
            sec = (dev.conj().T @ dev / n_mc).T
            mc_m2 += sec
            mc_z += (z[d] ** 2) * sec
        ez = sum(z[d] ** 2 * snap.col_covs[d] for d in range(2))
        r1 = np.linalg.norm(mc_m2 - snap.m2) / np.linalg.norm(snap.m2)
        r2 = np.linalg.norm(mc_z - ez) / np.linalg.norm(ez)
        ok = r1 < 0.01 and r2 < 0.01
        assert _report(
            "criterion 7: codebook-posterior moments vs 10^5 Monte Carlo",
            ok,
            f"m2 rel err {100 * r1:.2f}%, state-weighted rel err {100 * r2:.2f}% (<1%)",
        )


def _episodes(graph, model, rng, T=500, targets=(1,)):
    eps = []
    for env in range(2):
        intervened = frozenset() if env == 0 else frozenset(targets)
        z = np.zeros((T + 1, graph.dim))
        z[0] = rng.standard_normal(graph.dim) * 0.3
        for t in range(T):
            z[t + 1] = sample_transition(graph, model, z[t], rng, intervened)
        eps.append(LatentEpisode(z=z, env=env))
    return eps


class TestCriterion8:
    def test_chain_recovery(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            g = chain_graph(3)
            model = random_transitions(g, rng, weight_range=(0.6, 0.9), noise_std=0.3)
            learned, _ = learn_structure(_episodes(g, model, rng))
            hits += np.array_equal(learned.adjacency, g.adjacency)
        assert _report("criterion 8a: chain recovery", hits >= 95, f"{hits}/100 (>=95)")

    def test_er_recovery(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            g = er_dag(4, 0.3, rng)
            model = random_transitions(g, rng, weight_range=(0.6, 0.9), noise_std=0.3)
            targets = (int(rng.integers(0, 4)),)
            learned, _ = learn_structure(_episodes(g, model, rng, targets=targets))
            hits += np.array_equal(learned.adjacency, g.adjacency)
        assert _report("criterion 8b: ER(4, 0.3) recovery", hits >= 80, f"{hits}/100 (>=80)")


class TestCriterion9:
    def test_metric_axioms(self):
        from thzsim.semantic_metrics import distortion

        rng = np.random.default_rng(9)
        checks = {}
        # identity / symmetry / nonnegativity
        idsym = True
        for _ in range(200):
            a, b = rng.standard_normal(3), rng.standard_normal(3)
            idsym &= distortion(a, a) == 0.0
            idsym &= abs(distortion(a, b) - distortion(b, a)) < 1e-15
            idsym &= distortion(a, b) >= 0
        checks["distortion axioms"] = idsym
        # similarity kernel axioms
        sc = SemanticScorer(delta=0.3)
        sim_ok = True
        for _ in range(100):
            a, b = rng.standard_normal(2), rng.standard_normal(2)
            sim_ok &= sc.similarity(a, a) == 1.0
            sim_ok &= abs(sc.similarity(a, b) - sc.similarity(b, a)) < 1e-15
            sim_ok &= 0 < sc.similarity(a, b) <= 1
        checks["similarity axioms"] = sim_ok
        # chi-square oracle within 3 sigma
        d, sigma, delta, n = 3, 0.4, 0.5, 10_000
        z = rng.standard_normal(d)
        samples = [(z, z + sigma * rng.standard_normal(d)) for _ in range(n)]
        got = semantic_reliability(samples, delta)
        expected = stats.chi2.cdf(delta / sigma**2, d)
        se = np.sqrt(expected * (1 - expected) / n)
        checks["chi-square oracle"] = abs(got - expected) < 3 * se + 1e-9
        # reliability monotone in noise with common random numbers
        g = rng.standard_normal((4000, 2))
        rels = []
        for s in (0.1, 0.3, 1.0, 3.0):
            rows = [(z[:2], z[:2] + s * g[i]) for i in range(4000)]
            rels.append(semantic_reliability(rows, 0.4))
        checks["sigma monotonicity"] = all(a >= b for a, b in zip(rels, rels[1:]))
        ok = all(checks.values())
        assert _report("criterion 9: metric axiom suites", ok, str(checks))


class TestCriterion10:
    def test_byte_identical_records(self, tmp_path):
        cfg = desk_preset(users=(2,), seeds=(0, 1), steps=4, warmup=4, noise_draws=6,
                          schemes=("proposed", "dft_tracking"))
        blobs = []
        for run in range(2):
            records, _ = run_experiment(cfg)
            path = tmp_path / f"records_{run}.csv"
            write_records_csv(records, path)
            blobs.append(path.read_bytes())
        ok = blobs[0] == blobs[1]
        assert _report("criterion 10: byte-identical records.csv", ok,
                       f"{len(blobs[0])} bytes compared")
