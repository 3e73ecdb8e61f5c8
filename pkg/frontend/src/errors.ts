/** Typed errors mirroring the CLI exit classes (1 usage, 2 data, 3 endpoint). */

export class ConfigurationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConfigurationError";
  }
}

export class DataError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DataError";
  }
}

export class EndpointError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EndpointError";
  }
}

export function errorForExit(code: number, detail: string): Error {
  if (code === 1) return new ConfigurationError(detail);
  if (code === 2) return new DataError(detail);
  if (code === 3) return new EndpointError(detail);
  return new Error(`engine exited with code ${code}: ${detail}`);
}
