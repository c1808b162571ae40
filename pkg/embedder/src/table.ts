/**
 * Builds and serializes the embedding lookup table consumed by the search
 * core: {"dimension": d, "entries": {"<key>": [d floats], ...}}.
 *
 * Vector components are rounded to 9 significant digits before writing, so a
 * parse/serialize round trip reproduces the file byte for byte.
 */

import * as fs from "node:fs";
import type { Encoder } from "./encoder.js";

export interface EmbeddingTable {
  dimension: number;
  entries: Record<string, number[]>;
}

export interface ExportManifest {
  model: string;
  dimension: number;
  keys: string[];
}

export function buildTable(keys: string[], encoder: Encoder): EmbeddingTable {
  const entries: Record<string, number[]> = {};
  for (const key of keys) {
    entries[key] = encoder.encode(key);
  }
  return { dimension: encoder.dimension, entries };
}

export function round9(x: number): number {
  return Number(x.toPrecision(9));
}

export function serializeTable(table: EmbeddingTable): string {
  const lines: string[] = [];
  lines.push("{");
  lines.push(`  "dimension": ${table.dimension},`);
  lines.push('  "entries": {');
  const keys = Object.keys(table.entries).sort();
  keys.forEach((key, i) => {
    const vec = table.entries[key].map((x) => JSON.stringify(round9(x))).join(", ");
    const comma = i + 1 < keys.length ? "," : "";
    lines.push(`    ${JSON.stringify(key)}: [${vec}]${comma}`);
  });
  lines.push("  }");
  lines.push("}");
  return lines.join("\n") + "\n";
}

export function writeTable(table: EmbeddingTable, path: string): void {
  fs.writeFileSync(path, serializeTable(table), "utf-8");
}

export function writeExportManifest(manifest: ExportManifest, path: string): void {
  fs.writeFileSync(path, JSON.stringify(manifest, null, 2) + "\n", "utf-8");
}
