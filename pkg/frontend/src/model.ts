/**
 * Variational causal network over latent state dynamics.
 *
 * Per-coordinate VAE (modality m maps to latent coordinate m, which pins the
 * latent alignment and makes graph recovery identifiable), per-node MLP
 * transition over parent-masked previous latents, and relaxed-Bernoulli
 * parameters for edges (alpha logits) and per-environment intervention
 * targets (beta logits).  Gradients are written out explicitly; training
 * uses Adam with a seeded PRNG so runs are reproducible.
 */

export interface Spec {
  dim: number;
  hidden: number;
  lambdaG: number;
  lambdaI: number;
  lr: number;
  epochs: number;
  temperature: number;
  seed: number;
  obsSubsample?: number;
}

export const DEFAULT_SPEC: Omit<Spec, "dim"> = {
  hidden: 8,
  lambdaG: 2.0,
  lambdaI: 2.0,
  lr: 0.02,
  epochs: 250,
  temperature: 0.3,
  seed: 7,
};

/** Deterministic PRNG (mulberry32) with a normal variate helper. */
export class Rng {
  private s: number;
  constructor(seed: number) {
    this.s = seed >>> 0;
  }
  next(): number {
    this.s = (this.s + 0x6d2b79f5) >>> 0;
    let t = this.s;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }
  normal(): number {
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    while (v === 0) v = this.next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }
  logistic(): number {
    let u = 0;
    while (u === 0 || u === 1) u = this.next();
    return Math.log(u) - Math.log(1 - u);
  }
}

export function sigmoid(x: number): number {
  return 1 / (1 + Math.exp(-Math.max(-500, Math.min(500, x))));
}

/** Flat parameter store with named views. */
export class Params {
  data: Float64Array;
  grad: Float64Array;
  private offsets = new Map<string, [number, number]>();

  constructor(sizes: Record<string, number>) {
    let total = 0;
    for (const [name, n] of Object.entries(sizes)) {
      this.offsets.set(name, [total, n]);
      total += n;
    }
    this.data = new Float64Array(total);
    this.grad = new Float64Array(total);
  }

  view(name: string): Float64Array {
    const [off, n] = this.offsets.get(name)!;
    return this.data.subarray(off, off + n);
  }

  gview(name: string): Float64Array {
    const [off, n] = this.offsets.get(name)!;
    return this.grad.subarray(off, off + n);
  }

  zeroGrad(): void {
    this.grad.fill(0);
  }
}

export class Adam {
  private m: Float64Array;
  private v: Float64Array;
  private t = 0;
  constructor(private params: Params, private lr: number,
              private b1 = 0.9, private b2 = 0.999, private eps = 1e-8) {
    this.m = new Float64Array(params.data.length);
    this.v = new Float64Array(params.data.length);
  }
  step(): void {
    this.t += 1;
    const { data, grad } = this.params;
    const c1 = 1 - Math.pow(this.b1, this.t);
    const c2 = 1 - Math.pow(this.b2, this.t);
    for (let i = 0; i < data.length; i++) {
      const g = grad[i];
      this.m[i] = this.b1 * this.m[i] + (1 - this.b1) * g;
      this.v[i] = this.b2 * this.v[i] + (1 - this.b2) * g * g;
      data[i] -= (this.lr * (this.m[i] / c1)) / (Math.sqrt(this.v[i] / c2) + this.eps);
    }
  }
}

/**
 * Model parameters:
 *  enc_a, enc_b, enc_lv: per-coordinate recognition q(z|x) = N(a x + b, e^lv)
 *  dec_a, dec_b, dec_lv: per-coordinate likelihood p(x|z) = N(a z + b, e^lv)
 *  For each node i: transition MLP over masked parents
 *    W1_i (hidden x D), b1_i (hidden), w2_i (hidden), b2_i, lt_i, plus an
 *    intervened head w2p_i, b2p_i, ltp_i sharing the trunk.
 *  alpha (D x D) edge logits, beta (L x D) intervention logits.
 */
export class Vcn {
  p: Params;
  constructor(public dim: number, public hidden: number, public numIntervEnvs: number,
              rng: Rng) {
    const d = dim;
    const h = hidden;
    this.p = new Params({
      enc_a: d, enc_b: d, enc_lv: d,
      dec_a: d, dec_b: d, dec_lv: d,
      W1: d * h * d, b1: d * h,
      w2: d * h, b2: d, lt: d,
      w2p: d * h, b2p: d, ltp: d,
      alpha: d * d,
      beta: Math.max(numIntervEnvs, 1) * d,
    });
    const init = (name: string, scale: number) => {
      const v = this.p.view(name);
      for (let i = 0; i < v.length; i++) v[i] = scale * rng.normal();
    };
    this.p.view("enc_a").fill(1.0);
    this.p.view("dec_a").fill(1.0);
    this.p.view("enc_lv").fill(Math.log(0.05));
    this.p.view("dec_lv").fill(Math.log(0.05));
    init("W1", 0.3);
    init("b1", 0.05);
    init("w2", 0.3);
    this.p.view("lt").fill(Math.log(0.2));
    init("w2p", 0.3);
    this.p.view("b2p").fill(0.5);
    this.p.view("ltp").fill(Math.log(0.2));
    this.p.view("alpha").fill(0.0);
    this.p.view("beta").fill(-1.0);
  }

  edgeProb(i: number, j: number): number {
    return sigmoid(this.p.view("alpha")[i * this.dim + j]);
  }

  /** Hard adjacency by thresholding edge probabilities at 1/2. */
  hardAdjacency(): number[][] {
    const d = this.dim;
    const adj: number[][] = Array.from({ length: d }, () => new Array(d).fill(0));
    for (let i = 0; i < d; i++) {
      for (let j = 0; j < d; j++) {
        if (i !== j && this.edgeProb(i, j) > 0.5) adj[i][j] = 1;
      }
    }
    return adj;
  }

  interventionProb(env: number, node: number): number {
    return sigmoid(this.p.view("beta")[env * this.dim + node]);
  }
}

/** Greedy minimal edge removal until acyclic; never adds edges. */
export function projectAcyclic(adj: number[][], probs: number[][]): number[][] {
  const d = adj.length;
  const out = adj.map((row) => row.slice());

  const findCycle = (): number[] | null => {
    const state = new Array(d).fill(0);
    const stack: number[] = [];
    const dfs = (u: number): number[] | null => {
      state[u] = 1;
      stack.push(u);
      for (let v = 0; v < d; v++) {
        if (!out[u][v]) continue;
        if (state[v] === 1) {
          return stack.slice(stack.indexOf(v)).concat(v);
        }
        if (state[v] === 0) {
          const c = dfs(v);
          if (c) return c;
        }
      }
      state[u] = 2;
      stack.pop();
      return null;
    };
    for (let u = 0; u < d; u++) {
      if (state[u] === 0) {
        const c = dfs(u);
        if (c) return c;
      }
    }
    return null;
  };

  for (;;) {
    const cycle = findCycle();
    if (!cycle) return out;
    let worst: [number, number] | null = null;
    let worstP = Infinity;
    for (let s = 0; s + 1 < cycle.length; s++) {
      const i = cycle[s];
      const j = cycle[s + 1];
      if (probs[i][j] < worstP) {
        worstP = probs[i][j];
        worst = [i, j];
      }
    }
    out[worst![0]][worst![1]] = 0;
  }
}
