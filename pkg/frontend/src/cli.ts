/** Command line: train --data DIR --out FILE [--spec FILE]
 *                evaluate --model FILE --data DIR */

import * as fs from "node:fs";

import { loadEpisodes } from "./episodes.js";
import { DEFAULT_SPEC, Spec } from "./model.js";
import { distill, exportModel, trainVcn } from "./train.js";
import { deterministicElbo, interventionAuc, oneStepMse, structureF1 } from "./evaluate.js";

function parseFlags(argv: string[]): Record<string, string> {
  const out: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    if (argv[i].startsWith("--")) {
      out[argv[i].slice(2)] = argv[i + 1];
      i += 1;
    }
  }
  return out;
}

export function runTrain(dataDir: string, outFile: string, specFile?: string): void {
  const envs = loadEpisodes(dataDir);
  const dim = envs[0].arrays["X"].shape[2];
  let spec: Spec = { dim, ...DEFAULT_SPEC };
  if (specFile) {
    spec = { ...spec, ...JSON.parse(fs.readFileSync(specFile, "utf8")) };
  }
  const result = trainVcn(envs, spec);
  const start = result.lossTrace[0];
  const end = result.lossTrace[result.lossTrace.length - 1];
  if (!(end < start)) {
    throw new Error(`training loss did not decrease (${start} -> ${end})`);
  }
  const distilled = distill(result.vcn, result.adjacency);
  fs.writeFileSync(outFile, exportModel(result, distilled, envs));
  console.log(`loss ${start.toFixed(4)} -> ${end.toFixed(4)}`);
  console.log(`adjacency: ${JSON.stringify(result.adjacency)}`);
  console.log(`model written to ${outFile}`);
}

export function runEvaluate(modelFile: string, dataDir: string): void {
  const envs = loadEpisodes(dataDir);
  const doc = JSON.parse(fs.readFileSync(modelFile, "utf8"));
  if (doc.schema !== "cgm-model/v1") {
    throw new Error(`expected cgm-model/v1, got ${doc.schema}`);
  }
  const truth = envs[0].adjacency;
  const f1 = truth ? structureF1(doc.adjacency, truth) : null;
  console.log(JSON.stringify({
    structure_f1: f1,
    adjacency: doc.adjacency,
    intervention_targets: doc.intervention_targets,
  }));
}

export function main(argv: string[]): number {
  const cmd = argv[0];
  const flags = parseFlags(argv.slice(1));
  if (cmd === "train") {
    if (!flags.data || !flags.out) {
      console.error("usage: train --data DIR --out FILE [--spec FILE]");
      return 2;
    }
    runTrain(flags.data, flags.out, flags.spec);
    return 0;
  }
  if (cmd === "evaluate") {
    if (!flags.model || !flags.data) {
      console.error("usage: evaluate --model FILE --data DIR");
      return 2;
    }
    runEvaluate(flags.model, flags.data);
    return 0;
  }
  console.error("commands: train, evaluate");
  return 2;
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
