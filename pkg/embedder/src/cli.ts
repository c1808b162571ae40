/**
 * CLI: export --schema <labels manifest> --m <int> --model <id> --out <path>
 *
 * Reads the labels manifest produced by the search core's ingest command,
 * encodes every key it will look up, and writes the embedding table JSON
 * (plus a sidecar export manifest listing the emitted keys).
 */

import { createEncoder } from "./encoder.js";
import { buildKeys, loadManifest } from "./keys.js";
import { buildTable, writeExportManifest, writeTable } from "./table.js";

interface Args {
  schema: string;
  m: number;
  model: string;
  out: string;
  manifestOut?: string;
}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "export") {
    throw new Error(`unknown command "${argv[0] ?? ""}" (expected: export)`);
  }
  const flags = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new Error(`bad argument "${flag}"`);
    }
    flags.set(flag.slice(2), value);
  }
  for (const required of ["schema", "m", "out"]) {
    if (!flags.has(required)) {
      throw new Error(`missing required flag --${required}`);
    }
  }
  return {
    schema: flags.get("schema")!,
    m: Number(flags.get("m")),
    model: flags.get("model") ?? "hash:64",
    out: flags.get("out")!,
    manifestOut: flags.get("manifest"),
  };
}

export function run(argv: string[]): number {
  const args = parseArgs(argv);
  const manifest = loadManifest(args.schema);
  const encoder = createEncoder(args.model);
  const keys = buildKeys(manifest, args.m);
  const table = buildTable(keys, encoder);
  writeTable(table, args.out);
  writeExportManifest(
    { model: encoder.id, dimension: encoder.dimension, keys },
    args.manifestOut ?? `${args.out}.manifest.json`,
  );
  console.error(`wrote ${keys.length} vectors (dimension ${encoder.dimension}) to ${args.out}`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === `file://${process.argv[1]}`;
if (invokedDirectly) {
  try {
    process.exit(run(process.argv.slice(2)));
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(2);
  }
}
