/**
 * Text encoders producing L2-normalized vectors.
 *
 * The default "hash:<dim>" encoder is fully deterministic and offline: each
 * character trigram of the padded text is FNV-1a hashed into a signed slot.
 * It captures lexical overlap only, which is exactly what the lookup-table
 * contract needs (identical strings map to identical vectors); a real
 * sentence encoder can be plugged in behind the same interface.
 */

export interface Encoder {
  readonly id: string;
  readonly dimension: number;
  encode(text: string): number[];
}

function fnv1a(bytes: Uint8Array): number {
  let h = 0x811c9dc5;
  for (const b of bytes) {
    h ^= b;
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export class HashEncoder implements Encoder {
  readonly id: string;
  readonly dimension: number;
  private readonly utf8 = new TextEncoder();

  constructor(dimension: number) {
    if (!Number.isInteger(dimension) || dimension < 2) {
      throw new Error(`hash encoder dimension must be an integer >= 2, got ${dimension}`);
    }
    this.dimension = dimension;
    this.id = `hash:${dimension}`;
  }

  encode(text: string): number[] {
    const padded = `${text.toLowerCase()}`;
    const vec = new Array<number>(this.dimension).fill(0);
    for (let i = 0; i + 3 <= padded.length; i++) {
      const h = fnv1a(this.utf8.encode(padded.slice(i, i + 3)));
      const slot = h % this.dimension;
      const sign = (h >>> 16) & 1 ? 1 : -1;
      vec[slot] += sign;
    }
    return normalize(vec);
  }
}

export function normalize(vec: number[]): number[] {
  const norm = Math.hypot(...vec);
  if (norm === 0) {
    const unit = vec.slice();
    unit[0] = 1;
    return unit;
  }
  return vec.map((x) => x / norm);
}

export function createEncoder(modelId: string): Encoder {
  if (modelId.startsWith("hash:")) {
    const dim = Number(modelId.slice("hash:".length));
    return new HashEncoder(dim);
  }
  if (modelId === "hash") {
    return new HashEncoder(64);
  }
  throw new Error(`missing model: "${modelId}" (known encoders: hash, hash:<dim>)`);
}
