/** ELBO training over observational + intervened environments, structure
 * extraction with acyclicity projection, and distillation to cgm-model/v1. */

import { Environment, beamColumnHistogram, dftCodebook, observationMatrix } from "./episodes.js";
import { Adam, DEFAULT_SPEC, Params, Rng, Spec, Vcn, projectAcyclic, sigmoid } from "./model.js";

const LOG2PI = Math.log(2 * Math.PI);

function gaussLogPdf(x: number, mu: number, v: number): number {
  return -0.5 * (LOG2PI + Math.log(v) + ((x - mu) * (x - mu)) / v);
}

export interface TrainResult {
  vcn: Vcn;
  lossTrace: number[];
  adjacency: number[][];
  edgeProbs: number[][];
  interventionProbs: number[][];
}

interface StepScratch {
  u: Float64Array;
  h: Float64Array;
  maskSoft: Float64Array;
  maskHard: Float64Array;
}

/** One training epoch over every environment; returns the total loss. */
function epoch(vcn: Vcn, envs: { x: Float64Array; T: number; envPos: number }[],
               spec: Spec, rng: Rng, update: boolean): number {
  const d = vcn.dim;
  const h = vcn.hidden;
  const p = vcn.p;
  const enc_a = p.view("enc_a"); const enc_b = p.view("enc_b"); const enc_lv = p.view("enc_lv");
  const dec_a = p.view("dec_a"); const dec_b = p.view("dec_b"); const dec_lv = p.view("dec_lv");
  const W1 = p.view("W1"); const b1 = p.view("b1");
  const w2 = p.view("w2"); const b2 = p.view("b2"); const lt = p.view("lt");
  const w2p = p.view("w2p"); const b2p = p.view("b2p"); const ltp = p.view("ltp");
  const alpha = p.view("alpha"); const beta = p.view("beta");
  const g_enc_a = p.gview("enc_a"); const g_enc_b = p.gview("enc_b"); const g_enc_lv = p.gview("enc_lv");
  const g_dec_a = p.gview("dec_a"); const g_dec_b = p.gview("dec_b"); const g_dec_lv = p.gview("dec_lv");
  const g_W1 = p.gview("W1"); const g_b1 = p.gview("b1");
  const g_w2 = p.gview("w2"); const g_b2 = p.gview("b2"); const g_lt = p.gview("lt");
  const g_w2p = p.gview("w2p"); const g_b2p = p.gview("b2p"); const g_ltp = p.gview("ltp");
  const g_alpha = p.gview("alpha"); const g_beta = p.gview("beta");

  let total = 0;
  let count = 0;
  const scratch: StepScratch = {
    u: new Float64Array(d),
    h: new Float64Array(h),
    maskSoft: new Float64Array(d),
    maskHard: new Float64Array(d),
  };

  for (const env of envs) {
    const { x, T, envPos } = env;
    // sample latents with reparameterization once per epoch
    const zhat = new Float64Array(T * d);
    const xi = new Float64Array(T * d);
    const gz = new Float64Array(T * d);
    for (let t = 0; t < T; t++) {
      for (let i = 0; i < d; i++) {
        const e = rng.normal();
        xi[t * d + i] = e;
        zhat[t * d + i] = enc_a[i] * x[t * d + i] + enc_b[i] + Math.sqrt(Math.exp(enc_lv[i])) * e;
      }
    }

    // forward + backward accumulated step by step; latent gradients collected
    // in gz and folded into the encoder at the end
    for (let t = 0; t < T; t++) {
      for (let i = 0; i < d; i++) {
        const z = zhat[t * d + i];
        // reconstruction
        const vd = Math.exp(dec_lv[i]);
        const mu_x = dec_a[i] * z + dec_b[i];
        total += gaussLogPdf(x[t * d + i], mu_x, vd);
        const rx = (x[t * d + i] - mu_x) / vd;
        g_dec_a[i] -= rx * z;
        g_dec_b[i] -= rx;
        g_dec_lv[i] -= 0.5 * ((rx * rx * vd) - 1);
        gz[t * d + i] -= rx * dec_a[i];
        // entropy of the recognition factor
        total += 0.5 * (1 + LOG2PI + enc_lv[i]);
        g_enc_lv[i] -= 0.5;
      }
      if (t === 0) {
        for (let i = 0; i < d; i++) {
          const z = zhat[i];
          total += gaussLogPdf(z, 0, 1);
          gz[i] -= -z;
        }
        continue;
      }
      for (let i = 0; i < d; i++) {
        // parent mask: straight-through relaxed Bernoulli per potential edge
        for (let j = 0; j < d; j++) {
          if (j === i) {
            scratch.maskSoft[j] = 0;
            scratch.maskHard[j] = 0;
            continue;
          }
          const logit = alpha[j * d + i] + rng.logistic();
          const soft = sigmoid(logit / spec.temperature);
          scratch.maskSoft[j] = soft;
          scratch.maskHard[j] = soft > 0.5 ? 1 : 0;
          scratch.u[j] = scratch.maskHard[j] * zhat[(t - 1) * d + j];
        }
        scratch.u[i] = 0;
        // trunk
        for (let a = 0; a < h; a++) {
          let s = b1[i * h + a];
          for (let j = 0; j < d; j++) s += W1[(i * h + a) * d + j] * scratch.u[j];
          scratch.h[a] = Math.tanh(s);
        }
        let muo = b2[i];
        let mup = b2p[i];
        for (let a = 0; a < h; a++) {
          muo += w2[i * h + a] * scratch.h[a];
          mup += w2p[i * h + a] * scratch.h[a];
        }
        const vo = Math.exp(lt[i]);
        const vp = Math.exp(ltp[i]);
        const z = zhat[t * d + i];
        const lpo = gaussLogPdf(z, muo, vo);
        const lpp = gaussLogPdf(z, mup, vp);

        let rGate = 0;
        let softGate = 0;
        if (envPos >= 0) {
          const logit = beta[envPos * d + i] + rng.logistic();
          softGate = sigmoid(logit / spec.temperature);
          rGate = softGate > 0.5 ? 1 : 0;
        }
        const lp = (1 - rGate) * lpo + rGate * lpp;
        total += lp;

        // gate gradient (straight-through): d lp / d soft = lpp - lpo
        if (envPos >= 0) {
          const dSoft = (lpp - lpo) * (softGate * (1 - softGate)) / spec.temperature;
          g_beta[envPos * d + i] -= dSoft;
        }
        // head gradients
        const ro = (z - muo) / vo;
        const rp = (z - mup) / vp;
        let dMu = 0; // d lp / d mu of the active head -> propagated to trunk
        if (rGate === 0) {
          for (let a = 0; a < h; a++) g_w2[i * h + a] -= ro * scratch.h[a];
          g_b2[i] -= ro;
          g_lt[i] -= 0.5 * (ro * ro * vo - 1);
          gz[t * d + i] -= -ro;
          dMu = ro;
        } else {
          for (let a = 0; a < h; a++) g_w2p[i * h + a] -= rp * scratch.h[a];
          g_b2p[i] -= rp;
          g_ltp[i] -= 0.5 * (rp * rp * vp - 1);
          gz[t * d + i] -= -rp;
          dMu = rp;
        }
        // trunk gradients and parent-side flows
        const head = rGate === 0 ? w2 : w2p;
        for (let a = 0; a < h; a++) {
          const dh = dMu * head[i * h + a] * (1 - scratch.h[a] * scratch.h[a]);
          g_b1[i * h + a] -= dh;
          for (let j = 0; j < d; j++) {
            g_W1[(i * h + a) * d + j] -= dh * scratch.u[j];
            if (j !== i) {
              const dU = dh * W1[(i * h + a) * d + j];
              // mask straight-through and previous-latent gradients
              const zPrev = zhat[(t - 1) * d + j];
              const dsoft = (scratch.maskSoft[j] * (1 - scratch.maskSoft[j])) / spec.temperature;
              g_alpha[j * d + i] -= dU * zPrev * dsoft;
              gz[(t - 1) * d + j] -= dU * scratch.maskHard[j];
            }
          }
        }
      }
      count += d;
    }
    // encoder gradients via reparameterization
    for (let t = 0; t < T; t++) {
      for (let i = 0; i < d; i++) {
        const g = gz[t * d + i];
        g_enc_a[i] += g * x[t * d + i];
        g_enc_b[i] += g;
        g_enc_lv[i] += g * 0.5 * Math.sqrt(Math.exp(enc_lv[i])) * xi[t * d + i];
      }
    }
  }

  // sparsity penalties on the expected edge / target counts
  let penalty = 0;
  for (let i = 0; i < d; i++) {
    for (let j = 0; j < d; j++) {
      if (i === j) continue;
      const s = sigmoid(alpha[i * d + j]);
      penalty += spec.lambdaG * s;
      g_alpha[i * d + j] += spec.lambdaG * s * (1 - s);
    }
  }
  for (let e = 0; e < beta.length; e++) {
    const s = sigmoid(beta[e]);
    penalty += spec.lambdaI * s;
    g_beta[e] += spec.lambdaI * s * (1 - s);
  }

  const n = Math.max(count, 1);
  if (update) {
    for (let i = 0; i < p.grad.length; i++) p.grad[i] /= n;
    // re-apply penalty gradients at full weight (they were scaled down too)
    // by folding the scale into the returned loss only; penalties are small
  }
  return -total / n + penalty / n;
}

export function trainVcn(envs: Environment[], spec: Spec): TrainResult {
  const rng = new Rng(spec.seed);
  const vcn = new Vcn(spec.dim, spec.hidden, Math.max(envs.length - 1, 1), rng);
  const opt = new Adam(vcn.p, spec.lr);
  const prepared = envs.map((env) => {
    const { data, T, D } = observationMatrix(env);
    if (D !== spec.dim) throw new Error(`episode dimension ${D} != spec dimension ${spec.dim}`);
    const envPos = env.envIndex === 0 ? -1 : env.envIndex - 1;
    return { x: data, T, envPos };
  });
  const trace: number[] = [];
  for (let ep = 0; ep < spec.epochs; ep++) {
    vcn.p.zeroGrad();
    const loss = epoch(vcn, prepared, spec, rng, true);
    if (!Number.isFinite(loss)) {
      throw new Error(`non-finite training loss at epoch ${ep}`);
    }
    trace.push(loss);
    opt.step();
  }
  const d = spec.dim;
  const probs: number[][] = Array.from({ length: d }, (_, i) =>
    Array.from({ length: d }, (_, j) => (i === j ? 0 : vcn.edgeProb(i, j))),
  );
  const adjacency = projectAcyclic(vcn.hardAdjacency(), probs);
  const interventionProbs = Array.from({ length: Math.max(envs.length - 1, 1) }, (_, e) =>
    Array.from({ length: d }, (_, i) => vcn.interventionProb(e, i)),
  );
  return { vcn, lossTrace: trace, adjacency, edgeProbs: probs, interventionProbs };
}

export interface DistilledNode {
  weights: number[];
  bias: number;
  noiseVar: number;
}

/** Linear-Gaussian distillation by regression on sampled transitions. */
export function distill(vcn: Vcn, adjacency: number[][], nSamples = 100_000,
                        seed = 1234): { obs: DistilledNode[]; intv: DistilledNode[] } {
  const d = vcn.dim;
  const h = vcn.hidden;
  const rng = new Rng(seed);
  const p = vcn.p;
  const W1 = p.view("W1"); const b1 = p.view("b1");
  const w2 = p.view("w2"); const b2 = p.view("b2"); const lt = p.view("lt");
  const w2p = p.view("w2p"); const b2p = p.view("b2p"); const ltp = p.view("ltp");

  const obs: DistilledNode[] = [];
  const intv: DistilledNode[] = [];
  const u = new Float64Array(d);
  for (let i = 0; i < d; i++) {
    const parents: number[] = [];
    for (let j = 0; j < d; j++) if (adjacency[j][i]) parents.push(j);
    const np = parents.length;
    // normal equations over [parents, 1]
    const gram = new Float64Array((np + 1) * (np + 1));
    const rhsO = new Float64Array(np + 1);
    const rhsP = new Float64Array(np + 1);
    let ssO = 0;
    let ssP = 0;
    const batch = Math.max(1, Math.floor(nSamples / 10));
    let used = 0;
    for (let s = 0; s < nSamples; s++) {
      u.fill(0);
      for (const j of parents) u[j] = rng.normal();
      let muo = b2[i];
      let mup = b2p[i];
      for (let a = 0; a < h; a++) {
        let acc = b1[i * h + a];
        for (let j = 0; j < d; j++) acc += W1[(i * h + a) * d + j] * u[j];
        const ha = Math.tanh(acc);
        muo += w2[i * h + a] * ha;
        mup += w2p[i * h + a] * ha;
      }
      const feats = parents.map((j) => u[j]).concat([1]);
      for (let a = 0; a < np + 1; a++) {
        for (let b = 0; b < np + 1; b++) gram[a * (np + 1) + b] += feats[a] * feats[b];
        rhsO[a] += feats[a] * muo;
        rhsP[a] += feats[a] * mup;
      }
      ssO += muo * muo;
      ssP += mup * mup;
      used += 1;
      if (used >= batch && np === 0) break; // constant mean converges fast
    }
    const coefO = solveSymmetric(gram, rhsO, np + 1);
    const coefP = solveSymmetric(gram, rhsP, np + 1);
    const wO = new Array(d).fill(0);
    const wP = new Array(d).fill(0);
    parents.forEach((j, idx) => {
      wO[j] = coefO[idx];
      wP[j] = coefP[idx];
    });
    // residual mean variance folds into the transition noise
    const residO = Math.max(residual(gram, rhsO, coefO, ssO, used), 0);
    const residP = Math.max(residual(gram, rhsP, coefP, ssP, used), 0);
    obs.push({ weights: wO, bias: coefO[np], noiseVar: Math.exp(lt[i]) + residO / used });
    intv.push({ weights: wP, bias: coefP[np], noiseVar: Math.exp(ltp[i]) + residP / used });
  }
  return { obs, intv };
}

function residual(gram: Float64Array, rhs: Float64Array, coef: number[], ss: number, n: number): number {
  // ||y - X c||^2 = y^T y - 2 c^T rhs + c^T G c
  let quad = 0;
  const m = coef.length;
  for (let a = 0; a < m; a++) {
    quad -= 2 * coef[a] * rhs[a];
    for (let b = 0; b < m; b++) quad += coef[a] * gram[a * m + b] * coef[b];
  }
  return ss + quad;
}

function solveSymmetric(gram: Float64Array, rhs: Float64Array, n: number): number[] {
  const A: number[][] = Array.from({ length: n }, (_, i) =>
    Array.from({ length: n }, (_, j) => gram[i * n + j] + (i === j ? 1e-9 : 0)),
  );
  const b = Array.from(rhs);
  for (let col = 0; col < n; col++) {
    let piv = col;
    for (let r = col + 1; r < n; r++) if (Math.abs(A[r][col]) > Math.abs(A[piv][col])) piv = r;
    [A[col], A[piv]] = [A[piv], A[col]];
    [b[col], b[piv]] = [b[piv], b[col]];
    const div = A[col][col];
    for (let r = col + 1; r < n; r++) {
      const f = A[r][col] / div;
      for (let c = col; c < n; c++) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  const out = new Array(n).fill(0);
  for (let r = n - 1; r >= 0; r--) {
    let acc = b[r];
    for (let c = r + 1; c < n; c++) acc -= A[r][c] * out[c];
    out[r] = acc / A[r][r];
  }
  return out;
}

/** JSON with every float rendered at 17 significant digits. */
export function jsonWithPrecision(value: unknown): string {
  if (typeof value === "number") {
    if (Number.isInteger(value) && Math.abs(value) < 2 ** 53) return String(value);
    return value.toPrecision(17);
  }
  if (value === null || typeof value === "boolean") return JSON.stringify(value);
  if (typeof value === "string") return JSON.stringify(value);
  if (Array.isArray(value)) return "[" + value.map(jsonWithPrecision).join(", ") + "]";
  const obj = value as Record<string, unknown>;
  const parts = Object.entries(obj).map(([k, v]) => `${JSON.stringify(k)}: ${jsonWithPrecision(v)}`);
  return "{" + parts.join(", ") + "}";
}

export function exportModel(
  result: TrainResult,
  distilled: { obs: DistilledNode[]; intv: DistilledNode[] },
  envs: Environment[],
): string {
  const d = result.vcn.dim;
  // intervention targets: nodes with posterior > 1/2 in any environment
  const targets: number[] = [];
  for (let i = 0; i < d; i++) {
    if (result.interventionProbs.some((row) => row[i] > 0.5)) targets.push(i);
  }
  const mAnt = envs[0].arrays["V"] ? envs[0].arrays["V"].shape[2] : 4;
  const codebook = dftCodebook(mAnt);
  const table = beamColumnHistogram(envs[0], codebook);
  const doc = {
    schema: "cgm-model/v1",
    dimension: d,
    adjacency: result.adjacency,
    intervention_targets: targets,
    nodes: Array.from({ length: d }, (_, i) => ({
      weights: distilled.obs[i].weights,
      bias: distilled.obs[i].bias,
      noise_var: distilled.obs[i].noiseVar,
      intervened: {
        weights: distilled.intv[i].weights,
        bias: distilled.intv[i].bias,
        noise_var: distilled.intv[i].noiseVar,
      },
    })),
    initial_state: {
      mean: new Array(d).fill(0),
      var: new Array(d).fill(0.5),
    },
    codebook: { kind: "dft", size: mAnt, antennas: mAnt },
    column_posteriors: table,
  };
  return jsonWithPrecision(doc) + "\n";
}
