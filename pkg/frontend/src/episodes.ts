/** Reader for episodes/v1 datasets: binary tensor blobs plus JSON manifests. */

import * as fs from "node:fs";
import * as path from "node:path";

export interface ArraySpec {
  name: string;
  file: string;
  shape: number[];
  dtype: "float64" | "complex128";
  layout: string;
}

export interface Tensor {
  shape: number[];
  /** real part, C-order */
  re: Float64Array;
  /** imaginary part (zeros for real arrays) */
  im: Float64Array;
}

export interface Environment {
  envIndex: number;
  intervenedNodes: number[];
  adjacency: number[][] | null;
  arrays: Record<string, Tensor>;
}

export function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function readArray(dir: string, spec: ArraySpec): Tensor {
  const raw = fs.readFileSync(path.join(dir, spec.file));
  const doubles = new Float64Array(raw.buffer, raw.byteOffset, raw.byteLength / 8);
  const n = numel(spec.shape);
  if (spec.dtype === "complex128") {
    if (doubles.length !== 2 * n) {
      throw new Error(`array ${spec.name}: expected ${2 * n} doubles, got ${doubles.length}`);
    }
    const re = new Float64Array(n);
    const im = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      re[i] = doubles[2 * i];
      im[i] = doubles[2 * i + 1];
    }
    return { shape: spec.shape, re, im };
  }
  if (doubles.length !== n) {
    throw new Error(`array ${spec.name}: expected ${n} doubles, got ${doubles.length}`);
  }
  return { shape: spec.shape, re: new Float64Array(doubles), im: new Float64Array(n) };
}

export function loadEpisodes(root: string): Environment[] {
  const top = JSON.parse(fs.readFileSync(path.join(root, "manifest.json"), "utf8"));
  if (top.schema !== "episodes/v1") {
    throw new Error(`expected schema episodes/v1, got ${top.schema}`);
  }
  const envs: Environment[] = [];
  for (const entry of top.environments) {
    const dir = path.join(root, entry.path);
    const manifest = JSON.parse(fs.readFileSync(path.join(dir, "manifest.json"), "utf8"));
    const arrays: Record<string, Tensor> = {};
    for (const spec of manifest.arrays as ArraySpec[]) {
      arrays[spec.name] = readArray(dir, spec);
    }
    envs.push({
      envIndex: manifest.env_index,
      intervenedNodes: manifest.intervened_nodes ?? [],
      adjacency: manifest.adjacency ?? null,
      arrays,
    });
  }
  return envs;
}

/** Observation matrix X flattened to (T, D) for single-user episodes. */
export function observationMatrix(env: Environment): { data: Float64Array; T: number; D: number } {
  const x = env.arrays["X"];
  if (!x) throw new Error("episode is missing the X array");
  const [T, K, D] = x.shape;
  if (K !== 1) throw new Error("trainer expects single-user episodes");
  return { data: x.re, T, D };
}

/** Per-column nearest-codeword histogram of the recorded beams. */
export function beamColumnHistogram(
  env: Environment,
  codebook: { re: Float64Array; im: Float64Array; size: number; antennas: number },
): number[][] {
  const v = env.arrays["V"];
  if (!v) throw new Error("episode is missing the V array");
  const [T, K, M, D] = v.shape;
  const counts: number[][] = Array.from({ length: D }, () =>
    new Array(codebook.size).fill(1e-3),
  );
  for (let t = 0; t < T; t++) {
    for (let k = 0; k < K; k++) {
      for (let d = 0; d < D; d++) {
        let best = 0;
        let bestVal = -1;
        for (let c = 0; c < codebook.size; c++) {
          // |<codeword_c, column_d>|
          let ar = 0;
          let ai = 0;
          for (let m = 0; m < M; m++) {
            const idxV = ((t * K + k) * M + m) * D + d;
            const idxC = c * codebook.antennas + m;
            const vr = v.re[idxV];
            const vi = v.im[idxV];
            const cr = codebook.re[idxC];
            const ci = -codebook.im[idxC]; // conjugate
            ar += cr * vr - ci * vi;
            ai += cr * vi + ci * vr;
          }
          const mag = ar * ar + ai * ai;
          if (mag > bestVal) {
            bestVal = mag;
            best = c;
          }
        }
        counts[d][best] += 1;
      }
    }
  }
  return counts.map((row) => {
    const s = row.reduce((a, b) => a + b, 0);
    return row.map((c) => c / s);
  });
}

export function dftCodebook(m: number): { re: Float64Array; im: Float64Array; size: number; antennas: number } {
  const re = new Float64Array(m * m);
  const im = new Float64Array(m * m);
  const scale = 1 / Math.sqrt(m);
  for (let c = 0; c < m; c++) {
    for (let a = 0; a < m; a++) {
      const ang = (2 * Math.PI * c * a) / m;
      re[c * m + a] = Math.cos(ang) * scale;
      im[c * m + a] = Math.sin(ang) * scale;
    }
  }
  return { re, im, size: m, antennas: m };
}
