/**
 * Node bindings for the guessbench engine.
 *
 * Every operation shells out to the CLI rather than reimplementing the
 * pipeline, so outputs are byte-identical to the equivalent command-line
 * invocation and gold answers have a single source of truth.
 *
 * Handles are cheap but not thread-safe; use one handle per worker.
 */

import { execFileSync } from "child_process";
import { existsSync, mkdtempSync, readFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";

import { ConfigurationError, DataError, errorForExit } from "./errors";

export { ConfigurationError, DataError, EndpointError } from "./errors";

export interface BindingHandle {
  /** Command prefix for the engine, e.g. ["guessbench"]. */
  readonly command: string[];
  /** Engine version string, identical to `guessbench --version`. */
  readonly version: string;
}

export interface SyntheticConfig {
  nItems: number;
  format?: "concise" | "verbose";
  nTrajectories?: number;
  tokenBudget?: number;
  maxRounds?: number;
  epsilon?: number;
  historyWindow?: number;
  forgetHistoryProb?: number;
  maskProb?: number;
  maxMaskSections?: number;
}

export interface GenerateDatasetConfig {
  outDir: string;
  /** Quota JSON path (see presets/). */
  quota: string;
  seed: number;
  /** Restrict the quota file to these bucket limits. */
  buckets?: number[];
  /** Existing corpus directory; mutually exclusive with `synthetic`. */
  corpus?: string;
  /** Synthesize a world and simulate a corpus first. */
  synthetic?: SyntheticConfig;
  force?: boolean;
}

export interface GeneratedDataset {
  path: string;
  sampleCount: number;
}

export interface ScoreMatrix {
  nResults: number;
  nSamples: number;
  extractionFailures: number;
  /** question type -> bucket limit (as string) -> accuracy in [0, 1]. */
  accuracyMatrix: Record<string, Record<string, number>>;
  averages: Record<string, number>;
}

function runCli(handle: BindingHandle, args: string[]): string {
  const [bin, ...prefix] = handle.command;
  try {
    return execFileSync(bin, [...prefix, ...args], { encoding: "utf-8" });
  } catch (err) {
    const e = err as { status?: number; stderr?: string; message: string };
    if (typeof e.status === "number") {
      throw errorForExit(e.status, (e.stderr ?? e.message).trim());
    }
    throw err;
  }
}

/**
 * Resolve the engine CLI and capture its version.
 *
 * Set GUESSBENCH_CLI to override the command, e.g. "python3 -m guessbench.cli".
 */
export function openEngine(command?: string[]): BindingHandle {
  const resolved =
    command ?? (process.env.GUESSBENCH_CLI?.split(" ").filter(Boolean) || ["guessbench"]);
  const probe: BindingHandle = { command: resolved, version: "" };
  const version = runCli(probe, ["--version"]).trim();
  if (!version) {
    throw new ConfigurationError(`no version reported by ${resolved.join(" ")}`);
  }
  return { command: resolved, version };
}

function syntheticFlags(outDir: string, cfg: SyntheticConfig, seed: number): string[] {
  const flags = [
    "generate",
    "--synthetic", `n=${cfg.nItems}`,
    "--format", cfg.format ?? "concise",
    "--seed", String(seed),
    "--out", join(outDir, "corpus"),
  ];
  const numeric: Array<[string, number | undefined]> = [
    ["--n-trajectories", cfg.nTrajectories],
    ["--token-budget", cfg.tokenBudget],
    ["--max-rounds", cfg.maxRounds],
    ["--epsilon", cfg.epsilon],
    ["--history-window", cfg.historyWindow],
    ["--forget-history-prob", cfg.forgetHistoryProb],
    ["--mask-prob", cfg.maskProb],
    ["--max-mask-sections", cfg.maxMaskSections],
  ];
  for (const [flag, value] of numeric) {
    if (value !== undefined) flags.push(flag, String(value));
  }
  return flags;
}

/**
 * Build a QA dataset; byte-identical to running the CLI with the same flags.
 */
export function generateDataset(
  handle: BindingHandle,
  config: GenerateDatasetConfig,
): GeneratedDataset {
  if (!config.quota) {
    throw new ConfigurationError("config.quota is required");
  }
  if (!existsSync(config.quota)) {
    throw new ConfigurationError(`quota file ${config.quota} does not exist`);
  }
  try {
    JSON.parse(readFileSync(config.quota, "utf-8"));
  } catch (err) {
    throw new ConfigurationError(`quota file ${config.quota} is not valid JSON: ${err}`);
  }
  if (!config.corpus && !config.synthetic) {
    throw new ConfigurationError("provide config.corpus or config.synthetic");
  }
  if (config.corpus && config.synthetic) {
    throw new ConfigurationError("config.corpus and config.synthetic are mutually exclusive");
  }

  let corpusDir = config.corpus;
  if (config.synthetic) {
    const flags = syntheticFlags(config.outDir, config.synthetic, config.seed);
    if (config.force) flags.push("--force");
    runCli(handle, flags);
    corpusDir = join(config.outDir, "corpus");
  }

  const qaOut = join(config.outDir, "qa");
  const qaFlags = [
    "qa",
    "--corpus", corpusDir as string,
    "--quota", config.quota,
    "--seed", String(config.seed),
    "--out", qaOut,
  ];
  if (config.buckets?.length) qaFlags.push("--buckets", config.buckets.join(","));
  if (config.force) qaFlags.push("--force");
  runCli(handle, qaFlags);

  const manifest = JSON.parse(readFileSync(join(qaOut, "dataset_manifest.json"), "utf-8"));
  return { path: join(qaOut, "dataset.jsonl"), sampleCount: manifest.n_samples };
}

/**
 * Score a responses file against a dataset; numerically equal to the CLI's
 * report command (it is one).
 */
export function scoreFile(
  handle: BindingHandle,
  datasetPath: string,
  responsesPath: string,
): ScoreMatrix {
  if (!existsSync(datasetPath)) {
    throw new DataError(`dataset ${datasetPath} does not exist`);
  }
  if (!existsSync(responsesPath) || readFileSync(responsesPath, "utf-8").trim() === "") {
    throw new DataError(`responses file ${responsesPath} is missing or empty`);
  }
  const out = mkdtempSync(join(tmpdir(), "guessbench-report-"));
  runCli(handle, [
    "report", "--results", responsesPath, "--dataset", datasetPath, "--out", out,
  ]);
  const report = JSON.parse(readFileSync(join(out, "report.json"), "utf-8"));
  return {
    nResults: report.n_results,
    nSamples: report.n_samples,
    extractionFailures: report.extraction_failures,
    accuracyMatrix: report.accuracy_matrix,
    averages: report.averages,
  };
}
