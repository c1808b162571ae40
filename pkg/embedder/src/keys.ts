/**
 * Derives the exact key set the search core looks up: the target attribute
 * label, every split-attribute label, attribute-label concatenations for
 * combinations of up to m attributes (in the manifest's enumeration order),
 * and one "<attribute label> <value label>" key per atom.
 */

import * as fs from "node:fs";

export interface SplitEntry {
  name: string;
  label: string;
  value_labels: string[];
}

export interface LabelsManifest {
  aggregate: { name: string; label: string };
  group_by: { name: string; label: string };
  split: SplitEntry[];
  null_label: string;
}

export function loadManifest(path: string): LabelsManifest {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8"));
  for (const field of ["aggregate", "group_by", "split"]) {
    if (!(field in doc)) {
      throw new Error(`labels manifest is missing "${field}"`);
    }
  }
  for (const entry of doc.split) {
    if (!entry.name || entry.label === undefined || !Array.isArray(entry.value_labels)) {
      throw new Error(`bad split entry in labels manifest: ${JSON.stringify(entry)}`);
    }
  }
  return doc as LabelsManifest;
}

function* combinations<T>(items: T[], size: number): Generator<T[]> {
  if (size === 0) {
    yield [];
    return;
  }
  for (let i = 0; i + size <= items.length; i++) {
    for (const rest of combinations(items.slice(i + 1), size - 1)) {
      yield [items[i], ...rest];
    }
  }
}

export function buildKeys(manifest: LabelsManifest, m: number): string[] {
  if (!Number.isInteger(m) || m < 1) {
    throw new Error(`m must be an integer >= 1, got ${m}`);
  }
  const keys = new Set<string>();
  keys.add(manifest.aggregate.label);
  for (const entry of manifest.split) {
    keys.add(entry.label);
    for (const valueLabel of entry.value_labels) {
      keys.add(`${entry.label} ${valueLabel}`);
    }
  }
  const labels = manifest.split.map((e) => e.label);
  for (let size = 2; size <= m; size++) {
    for (const combo of combinations(labels, size)) {
      keys.add(combo.join(" "));
    }
  }
  return [...keys].sort();
}
