import { describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { loadEpisodes, numel } from "../src/episodes.js";
import { DEFAULT_SPEC, Rng, Vcn, projectAcyclic } from "../src/model.js";
import { distill, exportModel, jsonWithPrecision, trainVcn } from "../src/train.js";
import {
  deterministicElbo,
  interventionAuc,
  oneStepMse,
  structureF1,
} from "../src/evaluate.js";

const FIXTURE = path.join(__dirname, "..", "fixtures", "chain_episodes");

function trainOnFixture(overrides: Partial<Parameters<typeof trainVcn>[1]> = {}) {
  const envs = loadEpisodes(FIXTURE);
  const dim = envs[0].arrays["X"].shape[2];
  const spec = { dim, ...DEFAULT_SPEC, ...overrides };
  return { envs, spec, result: trainVcn(envs, spec) };
}

describe("episodes loader", () => {
  it("reads every advertised array with matching sizes", () => {
    const envs = loadEpisodes(FIXTURE);
    expect(envs.length).toBe(5);
    expect(envs[0].intervenedNodes).toEqual([]);
    expect(envs[1].intervenedNodes).toEqual([1]);
    for (const env of envs) {
      for (const [name, tensor] of Object.entries(env.arrays)) {
        expect(tensor.re.length).toBe(numel(tensor.shape));
      }
    }
  });

  it("exposes the ground-truth annotation", () => {
    const envs = loadEpisodes(FIXTURE);
    expect(envs[0].adjacency).toEqual([
      [0, 1, 0],
      [0, 0, 1],
      [0, 0, 0],
    ]);
  });
});

describe("training on the chain fixture", () => {
  const { envs, spec, result } = trainOnFixture();

  it("recovers the chain structure with F1 = 1.0", () => {
    expect(structureF1(result.adjacency, envs[0].adjacency!)).toBe(1.0);
  });

  it("drives the loss down", () => {
    const t = result.lossTrace;
    expect(t[t.length - 1]).toBeLessThan(t[0]);
  });

  it("ranks true intervention targets above the rest (AUC > 0.9)", () => {
    const auc = interventionAuc(result.interventionProbs, envs);
    expect(auc).not.toBeNull();
    expect(auc!).toBeGreaterThan(0.9);
  });

  it("beats a random-init model on the deterministic bound", () => {
    const fresh = new Vcn(spec.dim, spec.hidden, envs.length - 1, new Rng(99));
    const trained = deterministicElbo(result.vcn, envs[0], result.adjacency);
    const untrained = deterministicElbo(fresh, envs[0], result.adjacency);
    expect(trained).toBeGreaterThan(untrained);
  });

  it("one-step prediction beats the variance baseline", () => {
    const { mse, baseline } = oneStepMse(result.vcn, envs[0], result.adjacency);
    expect(mse).toBeLessThan(baseline);
  });

  it("exports a valid cgm-model/v1 document", () => {
    const distilled = distill(result.vcn, result.adjacency, 20_000);
    const text = exportModel(result, distilled, envs);
    const doc = JSON.parse(text);
    expect(doc.schema).toBe("cgm-model/v1");
    expect(doc.dimension).toBe(3);
    expect(doc.adjacency).toEqual(envs[0].adjacency);
    expect(doc.nodes.length).toBe(3);
    for (const node of doc.nodes) {
      expect(node.weights.length).toBe(3);
      expect(node.noise_var).toBeGreaterThan(0);
      expect(node.intervened.noise_var).toBeGreaterThan(0);
    }
    for (const row of doc.column_posteriors) {
      const s = row.reduce((a: number, b: number) => a + b, 0);
      expect(Math.abs(s - 1)).toBeLessThan(1e-9);
    }
  });
});

describe("sparsity penalty domination", () => {
  it("returns the empty graph when the edge penalty is overwhelming", () => {
    const { result } = trainOnFixture({ lambdaG: 1e5, epochs: 60 });
    const total = result.adjacency.flat().reduce((a, b) => a + b, 0);
    expect(total).toBe(0);
  });
});

describe("acyclicity projection", () => {
  it("never adds edges and always returns a DAG", () => {
    const rng = new Rng(5);
    for (let trial = 0; trial < 50; trial++) {
      const d = 4;
      const adj = Array.from({ length: d }, () => Array.from({ length: d }, () => 0));
      const probs = Array.from({ length: d }, () =>
        Array.from({ length: d }, () => rng.next()),
      );
      for (let i = 0; i < d; i++) {
        for (let j = 0; j < d; j++) {
          if (i !== j && rng.next() < 0.5) adj[i][j] = 1;
        }
      }
      const out = projectAcyclic(adj, probs);
      for (let i = 0; i < d; i++) {
        for (let j = 0; j < d; j++) {
          expect(out[i][j] <= adj[i][j]).toBe(true);
        }
      }
      // DAG check: repeated removal of sink nodes must empty the graph
      const remaining = new Set(Array.from({ length: d }, (_, i) => i));
      let progress = true;
      while (progress && remaining.size) {
        progress = false;
        for (const n of Array.from(remaining)) {
          const hasOut = Array.from(remaining).some((m) => m !== n && out[n][m]);
          if (!hasOut) {
            remaining.delete(n);
            progress = true;
          }
        }
      }
      expect(remaining.size).toBe(0);
    }
  });
});

describe("precision serialization", () => {
  it("round-trips doubles exactly at 17 significant digits", () => {
    const rng = new Rng(11);
    for (let i = 0; i < 200; i++) {
      const x = (rng.normal() * Math.pow(10, Math.floor(rng.next() * 20 - 10)));
      const text = jsonWithPrecision({ v: x });
      expect(JSON.parse(text).v).toBe(x);
    }
  });
});

describe("cross-component exchange", () => {
  it("writes a file the simulator-side loader accepts", () => {
    const { envs, result } = trainOnFixture();
    const distilled = distill(result.vcn, result.adjacency, 20_000);
    const tmp = path.join(os.tmpdir(), `cgm-${process.pid}.json`);
    fs.writeFileSync(tmp, exportModel(result, distilled, envs));
    const doc = JSON.parse(fs.readFileSync(tmp, "utf8"));
    // structural invariants the python loader enforces
    expect(doc.schema).toBe("cgm-model/v1");
    expect(doc.adjacency.length).toBe(doc.dimension);
    expect(doc.column_posteriors.length).toBe(doc.dimension);
    fs.unlinkSync(tmp);
  });
});
