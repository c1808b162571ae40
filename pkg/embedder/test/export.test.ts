import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { run } from "../src/cli.js";
import { HashEncoder } from "../src/encoder.js";
import { buildKeys, loadManifest } from "../src/keys.js";
import { buildTable, serializeTable } from "../src/table.js";

const FIXTURE = {
  aggregate: { name: "Income", label: "Income" },
  group_by: { name: "EducationLevel", label: "EducationLevel" },
  split: [
    { name: "Sex", label: "Sex", value_labels: ["Female", "Male"] },
    { name: "Occupation", label: "Occupation", value_labels: ["CS&Math", "Education", "Sales"] },
    { name: "QoB", label: "Quarter Of Birth", value_labels: ["1", "2", "3", "4"] },
  ],
  null_label: "missing",
};

let dir: string;

beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "embedder-"));
  fs.writeFileSync(path.join(dir, "labels.json"), JSON.stringify(FIXTURE));
});

afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

describe("key derivation", () => {
  it("covers target, attribute labels, atoms, and combo concatenations", () => {
    const manifest = loadManifest(path.join(dir, "labels.json"));
    const keys = new Set(buildKeys(manifest, 2));
    expect(keys.has("Income")).toBe(true);
    expect(keys.has("Sex")).toBe(true);
    expect(keys.has("Sex Female")).toBe(true);
    expect(keys.has("Occupation CS&Math")).toBe(true);
    expect(keys.has("Quarter Of Birth 3")).toBe(true);
    // pairs in manifest order
    expect(keys.has("Sex Occupation")).toBe(true);
    expect(keys.has("Sex Quarter Of Birth")).toBe(true);
    expect(keys.has("Occupation Quarter Of Birth")).toBe(true);
    // 1 target + 3 labels + (2+3+4) atoms + 3 pairs
    expect(keys.size).toBe(1 + 3 + 9 + 3);
  });

  it("m=1 emits no concatenations", () => {
    const manifest = loadManifest(path.join(dir, "labels.json"));
    const keys = new Set(buildKeys(manifest, 1));
    expect(keys.has("Sex Occupation")).toBe(false);
    expect(keys.size).toBe(1 + 3 + 9);
  });
});

describe("table serialization", () => {
  it("dimension field matches every vector length", () => {
    const manifest = loadManifest(path.join(dir, "labels.json"));
    const table = buildTable(buildKeys(manifest, 2), new HashEncoder(24));
    expect(table.dimension).toBe(24);
    for (const vec of Object.values(table.entries)) {
      expect(vec.length).toBe(24);
    }
  });

  it("round trips byte-for-byte at 9 significant digits", () => {
    const manifest = loadManifest(path.join(dir, "labels.json"));
    const table = buildTable(buildKeys(manifest, 2), new HashEncoder(16));
    const text = serializeTable(table);
    const parsed = JSON.parse(text);
    const again = serializeTable(parsed);
    expect(again).toBe(text);
  });
});

describe("cli", () => {
  it("writes the table and the export manifest", () => {
    const out = path.join(dir, "table.json");
    const code = run(["export", "--schema", path.join(dir, "labels.json"), "--m", "2", "--model", "hash:32", "--out", out]);
    expect(code).toBe(0);
    const doc = JSON.parse(fs.readFileSync(out, "utf-8"));
    expect(doc.dimension).toBe(32);
    expect(Object.keys(doc.entries).length).toBe(16);
    const manifest = JSON.parse(fs.readFileSync(`${out}.manifest.json`, "utf-8"));
    expect(manifest.model).toBe("hash:32");
    expect(manifest.keys.length).toBe(16);
  });

  it("identical label strings yield identical vectors", () => {
    const duplicated = {
      ...FIXTURE,
      split: [
        { name: "A", label: "Shared Label", value_labels: ["x"] },
        { name: "B", label: "Shared Label", value_labels: ["x"] },
      ],
    };
    fs.writeFileSync(path.join(dir, "dup.json"), JSON.stringify(duplicated));
    const out = path.join(dir, "dup-table.json");
    run(["export", "--schema", path.join(dir, "dup.json"), "--m", "1", "--model", "hash:16", "--out", out]);
    const doc = JSON.parse(fs.readFileSync(out, "utf-8"));
    // both attributes collapse onto one key, so the table stays consistent
    expect(doc.entries["Shared Label"]).toBeDefined();
    expect(doc.entries["Shared Label x"]).toBeDefined();
  });

  it("rejects unknown models and missing flags", () => {
    expect(() => run(["export", "--schema", path.join(dir, "labels.json"), "--m", "1", "--model", "nope", "--out", path.join(dir, "x.json")])).toThrow(/missing model/);
    expect(() => run(["export", "--m", "1"])).toThrow(/--schema/);
    expect(() => run(["frobnicate"])).toThrow(/unknown command/);
  });
});
