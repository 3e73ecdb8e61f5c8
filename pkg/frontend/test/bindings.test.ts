import { execFileSync } from "child_process";
import { mkdtempSync, readFileSync, writeFileSync, rmSync } from "fs";
import { tmpdir } from "os";
import { join, resolve } from "path";
import { afterAll, beforeAll, describe, expect, test } from "vitest";

import {
  ConfigurationError,
  DataError,
  GenerateDatasetConfig,
  generateDataset,
  openEngine,
  scoreFile,
} from "../src/index";

const REPO = resolve(__dirname, "..", "..");
const QUOTA = join(REPO, "presets", "ki_concise.json");

const SYNTHETIC = {
  nItems: 256,
  format: "concise" as const,
  nTrajectories: 8,
  tokenBudget: 6000,
  historyWindow: 2,
  forgetHistoryProb: 0.85,
  maskProb: 0.9,
  maxMaskSections: 3,
  epsilon: 0.25,
};

// a small quota the tiny corpus can satisfy
const SMALL_QUOTA = {
  buckets: {
    "4096": { count_correctness: 4, find_duplicates: 3, count_frequency_tool: 3 },
  },
};

let work: string;
let handle: ReturnType<typeof openEngine>;
let quotaPath: string;

beforeAll(() => {
  work = mkdtempSync(join(tmpdir(), "guessbench-bindings-"));
  handle = openEngine();
  quotaPath = join(work, "quota.json");
  writeFileSync(quotaPath, JSON.stringify(SMALL_QUOTA));
});

afterAll(() => {
  rmSync(work, { recursive: true, force: true });
});

function cliGenerateEquivalent(outDir: string) {
  const [bin, ...prefix] = handle.command;
  execFileSync(bin, [
    ...prefix, "generate",
    "--synthetic", `n=${SYNTHETIC.nItems}`,
    "--format", SYNTHETIC.format,
    "--seed", "5",
    "--out", join(outDir, "corpus"),
    "--n-trajectories", String(SYNTHETIC.nTrajectories),
    "--token-budget", String(SYNTHETIC.tokenBudget),
    "--epsilon", String(SYNTHETIC.epsilon),
    "--history-window", String(SYNTHETIC.historyWindow),
    "--forget-history-prob", String(SYNTHETIC.forgetHistoryProb),
    "--mask-prob", String(SYNTHETIC.maskProb),
    "--max-mask-sections", String(SYNTHETIC.maxMaskSections),
  ]);
  execFileSync(bin, [
    ...prefix, "qa",
    "--corpus", join(outDir, "corpus"),
    "--quota", quotaPath,
    "--seed", "5",
    "--out", join(outDir, "qa"),
  ]);
  return join(outDir, "qa", "dataset.jsonl");
}

describe("engine handle", () => {
  test("version equals the CLI's", () => {
    const [bin, ...prefix] = handle.command;
    const direct = execFileSync(bin, [...prefix, "--version"], { encoding: "utf-8" }).trim();
    expect(handle.version).toBe(direct);
    expect(handle.version).toMatch(/^\d+\.\d+\.\d+$/);
  });
});

describe("generateDataset", () => {
  test("is byte-identical to the equivalent CLI invocation", () => {
    const viaBinding = generateDataset(handle, {
      outDir: join(work, "binding"),
      quota: quotaPath,
      seed: 5,
      synthetic: SYNTHETIC,
    });
    expect(viaBinding.sampleCount).toBe(10);

    const viaCli = cliGenerateEquivalent(join(work, "direct"));
    expect(readFileSync(viaBinding.path)).toEqual(readFileSync(viaCli));
  });

  test("same config twice produces an identical file", () => {
    const a = generateDataset(handle, {
      outDir: join(work, "rep1"), quota: quotaPath, seed: 5, synthetic: SYNTHETIC,
    });
    const b = generateDataset(handle, {
      outDir: join(work, "rep2"), quota: quotaPath, seed: 5, synthetic: SYNTHETIC,
    });
    expect(readFileSync(a.path)).toEqual(readFileSync(b.path));
  });

  test("invalid quota raises a configuration error", () => {
    const bad = join(work, "bad-quota.json");
    writeFileSync(bad, "{not json");
    const config: GenerateDatasetConfig = {
      outDir: join(work, "bad"), quota: bad, seed: 5, synthetic: SYNTHETIC,
    };
    expect(() => generateDataset(handle, config)).toThrow(ConfigurationError);
    expect(() =>
      generateDataset(handle, { ...config, quota: join(work, "missing.json") }),
    ).toThrow(ConfigurationError);
    expect(() =>
      generateDataset(handle, { outDir: join(work, "bad2"), quota: quotaPath, seed: 5 }),
    ).toThrow(ConfigurationError);
  });

  test("engine data failures surface as DataError", () => {
    // quota demands a bucket the tiny corpus cannot fill
    const big = join(work, "big-quota.json");
    writeFileSync(big, JSON.stringify({ buckets: { "4194304": { intersection: 1 } } }));
    expect(() =>
      generateDataset(handle, {
        outDir: join(work, "overreach"), quota: big, seed: 5, synthetic: SYNTHETIC,
      }),
    ).toThrow(DataError);
  });
});

describe("scoreFile", () => {
  function goldResponses(datasetPath: string, path: string) {
    const lines = readFileSync(datasetPath, "utf-8").trim().split("\n");
    const out = lines.map((line, i) => {
      const sample = JSON.parse(line);
      return JSON.stringify({
        sample_id: sample.sample_id,
        correct: i % 2 === 0, // alternate so the matrix is non-trivial
        extraction_failed: false,
      });
    });
    writeFileSync(path, out.join("\n") + "\n");
  }

  test("matrix equals the CLI report numerically", () => {
    const ds = generateDataset(handle, {
      outDir: join(work, "score"), quota: quotaPath, seed: 5, synthetic: SYNTHETIC,
    });
    const responses = join(work, "responses.jsonl");
    goldResponses(ds.path, responses);

    const viaBinding = scoreFile(handle, ds.path, responses);

    const [bin, ...prefix] = handle.command;
    const reportDir = join(work, "cli-report");
    execFileSync(bin, [
      ...prefix, "report", "--results", responses, "--dataset", ds.path, "--out", reportDir,
    ]);
    const direct = JSON.parse(readFileSync(join(reportDir, "report.json"), "utf-8"));

    expect(viaBinding.accuracyMatrix).toEqual(direct.accuracy_matrix);
    expect(viaBinding.averages).toEqual(direct.averages);
    expect(viaBinding.nResults).toBe(direct.n_results);
    expect(viaBinding.extractionFailures).toBe(direct.extraction_failures);
  });

  test("all-correct responses score 1.0 everywhere", () => {
    const ds = generateDataset(handle, {
      outDir: join(work, "score2"), quota: quotaPath, seed: 5, synthetic: SYNTHETIC,
    });
    const responses = join(work, "all-correct.jsonl");
    const lines = readFileSync(ds.path, "utf-8").trim().split("\n").map((line) => {
      const s = JSON.parse(line);
      return JSON.stringify({ sample_id: s.sample_id, correct: true, extraction_failed: false });
    });
    writeFileSync(responses, lines.join("\n") + "\n");
    const matrix = scoreFile(handle, ds.path, responses);
    for (const row of Object.values(matrix.accuracyMatrix)) {
      for (const acc of Object.values(row)) expect(acc).toBe(1.0);
    }
  });

  test("empty responses file is an explicit error", () => {
    const ds = join(work, "score", "qa", "dataset.jsonl");
    const empty = join(work, "empty.jsonl");
    writeFileSync(empty, "");
    expect(() => scoreFile(handle, ds, empty)).toThrow(DataError);
    expect(() => scoreFile(handle, ds, join(work, "nope.jsonl"))).toThrow(DataError);
  });
});
