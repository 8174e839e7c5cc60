/** Held-out evaluation: deterministic ELBO, one-step prediction MSE against
 * the trivial variance baseline, and structure F1 against annotations. */

import { Environment, observationMatrix } from "./episodes.js";
import { Vcn, sigmoid } from "./model.js";

const LOG2PI = Math.log(2 * Math.PI);

function gaussLogPdf(x: number, mu: number, v: number): number {
  return -0.5 * (LOG2PI + Math.log(v) + ((x - mu) * (x - mu)) / v);
}

export interface Report {
  elbo: number;
  oneStepMse: number;
  targetVariance: number;
  structureF1: number | null;
}

/** Deterministic forward pass with encoder means as the latent path. */
export function deterministicElbo(vcn: Vcn, env: Environment, adjacency: number[][]): number {
  const { data: x, T, D } = observationMatrix(env);
  const p = vcn.p;
  const enc_a = p.view("enc_a"); const enc_b = p.view("enc_b"); const enc_lv = p.view("enc_lv");
  const dec_a = p.view("dec_a"); const dec_b = p.view("dec_b"); const dec_lv = p.view("dec_lv");
  const h = vcn.hidden;
  const W1 = p.view("W1"); const b1 = p.view("b1");
  const w2 = p.view("w2"); const b2 = p.view("b2"); const lt = p.view("lt");
  let total = 0;
  const z = new Float64Array(T * D);
  for (let t = 0; t < T; t++) {
    for (let i = 0; i < D; i++) z[t * D + i] = enc_a[i] * x[t * D + i] + enc_b[i];
  }
  for (let t = 0; t < T; t++) {
    for (let i = 0; i < D; i++) {
      total += gaussLogPdf(x[t * D + i], dec_a[i] * z[t * D + i] + dec_b[i], Math.exp(dec_lv[i]));
      total += 0.5 * (1 + LOG2PI + enc_lv[i]);
      if (t === 0) {
        total += gaussLogPdf(z[i], 0, 1);
        continue;
      }
      let mu = b2[i];
      for (let a = 0; a < h; a++) {
        let acc = b1[i * h + a];
        for (let j = 0; j < D; j++) {
          if (j !== i && adjacency[j][i]) acc += W1[(i * h + a) * D + j] * z[(t - 1) * D + j];
        }
        mu += w2[i * h + a] * Math.tanh(acc);
      }
      total += gaussLogPdf(z[t * D + i], mu, Math.exp(lt[i]));
    }
  }
  return total / (T * D);
}

export function oneStepMse(vcn: Vcn, env: Environment, adjacency: number[][]): { mse: number; baseline: number } {
  const { data: x, T, D } = observationMatrix(env);
  const p = vcn.p;
  const enc_a = p.view("enc_a"); const enc_b = p.view("enc_b");
  const dec_a = p.view("dec_a"); const dec_b = p.view("dec_b");
  const h = vcn.hidden;
  const W1 = p.view("W1"); const b1 = p.view("b1");
  const w2 = p.view("w2"); const b2 = p.view("b2");
  let se = 0;
  let n = 0;
  let mean = 0;
  let sq = 0;
  for (let t = 1; t < T; t++) {
    for (let i = 0; i < D; i++) {
      let mu = b2[i];
      for (let a = 0; a < h; a++) {
        let acc = b1[i * h + a];
        for (let j = 0; j < D; j++) {
          if (j !== i && adjacency[j][i]) {
            acc += W1[(i * h + a) * D + j] * (enc_a[j] * x[(t - 1) * D + j] + enc_b[j]);
          }
        }
        mu += w2[i * h + a] * Math.tanh(acc);
      }
      const xhat = dec_a[i] * mu + dec_b[i];
      const target = x[t * D + i];
      se += (xhat - target) * (xhat - target);
      mean += target;
      sq += target * target;
      n += 1;
    }
  }
  mean /= n;
  return { mse: se / n, baseline: sq / n - mean * mean };
}

export function structureF1(predicted: number[][], truth: number[][]): number {
  let tp = 0;
  let fp = 0;
  let fn = 0;
  const d = truth.length;
  for (let i = 0; i < d; i++) {
    for (let j = 0; j < d; j++) {
      if (i === j) continue;
      if (predicted[i][j] && truth[i][j]) tp++;
      else if (predicted[i][j] && !truth[i][j]) fp++;
      else if (!predicted[i][j] && truth[i][j]) fn++;
    }
  }
  if (tp === 0) return 0;
  const prec = tp / (tp + fp);
  const rec = tp / (tp + fn);
  return (2 * prec * rec) / (prec + rec);
}

/** Area under the ROC curve of intervention logits vs annotated targets. */
export function interventionAuc(probRows: number[][], envs: Environment[]): number | null {
  const pos: number[] = [];
  const neg: number[] = [];
  for (const env of envs) {
    if (env.envIndex === 0) continue;
    const row = probRows[env.envIndex - 1];
    if (!row) continue;
    row.forEach((p, node) => {
      (env.intervenedNodes.includes(node) ? pos : neg).push(p);
    });
  }
  if (!pos.length || !neg.length) return null;
  let wins = 0;
  for (const a of pos) for (const b of neg) wins += a > b ? 1 : a === b ? 0.5 : 0;
  return wins / (pos.length * neg.length);
}
