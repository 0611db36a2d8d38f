/**
 * Sentence encoders behind the bridge.
 *
 * Two backends: a deterministic local trigram-hashing encoder (model ids
 * like "hash:384", no downloads, used by the test suite) and any
 * transformers.js feature-extraction checkpoint (e.g.
 * "Xenova/all-MiniLM-L6-v2"), loaded lazily so the package works without
 * that optional dependency installed.
 */

export interface Encoder {
  readonly modelId: string;
  readonly dim: number;
  encode(sentences: string[]): Promise<number[][]>;
}

/** FNV-1a 32-bit over UTF-8 bytes, seeded. */
function fnv1a(text: string, seed: number): number {
  let hash = (0x811c9dc5 ^ seed) >>> 0;
  const bytes = Buffer.from(text, "utf-8");
  for (const byte of bytes) {
    hash ^= byte;
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

export class HashEncoder implements Encoder {
  readonly modelId: string;
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 8) {
      throw new Error(`hash encoder needs an integer dim >= 8, got ${dim}`);
    }
    this.dim = dim;
    this.modelId = `hash:${dim}`;
  }

  private encodeOne(text: string): number[] {
    const vec = new Array<number>(this.dim).fill(0);
    const grams: string[] = [];
    if (text.length < 3) {
      grams.push(text);
    } else {
      for (let i = 0; i + 3 <= text.length; i++) {
        grams.push(text.slice(i, i + 3));
      }
    }
    for (const gram of grams) {
      const h = fnv1a(gram, 0x9747b28c);
      const bucket = h % this.dim;
      const sign = (fnv1a(gram, 0x3bd1e995) & 1) === 0 ? 1 : -1;
      vec[bucket] += sign;
    }
    let norm = Math.sqrt(vec.reduce((acc, x) => acc + x * x, 0));
    if (norm === 0) {
      vec[0] = 1;
      norm = 1;
    }
    return vec.map((x) => x / norm);
  }

  async encode(sentences: string[]): Promise<number[][]> {
    return sentences.map((text) => this.encodeOne(text));
  }
}

/**
 * Frozen pre-trained sentence encoder via transformers.js, mean-pooled and
 * normalized. Inference calls are chained so concurrent requests never
 * overlap inside the pipeline.
 */
class TransformerEncoder implements Encoder {
  readonly modelId: string;
  readonly dim: number;
  private readonly pipe: (texts: string[], opts: object) => Promise<{
    tolist(): number[][];
  }>;
  private queue: Promise<unknown> = Promise.resolve();

  private constructor(modelId: string, dim: number, pipe: TransformerEncoder["pipe"]) {
    this.modelId = modelId;
    this.dim = dim;
    this.pipe = pipe;
  }

  static async load(modelId: string): Promise<TransformerEncoder> {
    let transformers;
    try {
      transformers = await import("@huggingface/transformers");
    } catch {
      throw new Error(
        `model "${modelId}" needs the optional @huggingface/transformers ` +
        `package (npm install @huggingface/transformers), or use a ` +
        `"hash:<dim>" model id`,
      );
    }
    const pipe = (await transformers.pipeline("feature-extraction", modelId)) as
      TransformerEncoder["pipe"];
    const probe = await pipe(["dimension probe"], { pooling: "mean", normalize: true });
    const dim = probe.tolist()[0].length;
    return new TransformerEncoder(modelId, dim, pipe);
  }

  async encode(sentences: string[]): Promise<number[][]> {
    const run = this.queue.then(() =>
      this.pipe(sentences, { pooling: "mean", normalize: true }),
    );
    this.queue = run.catch(() => undefined);
    return (await run).tolist();
  }
}

export async function loadEncoder(modelId: string): Promise<Encoder> {
  if (modelId.startsWith("hash:")) {
    return new HashEncoder(Number(modelId.slice("hash:".length)));
  }
  return TransformerEncoder.load(modelId);
}
