/**
 * The HTTP surface: GET /health and POST /embed.
 *
 * Both answer 503 until the encoder has finished loading. /embed accepts
 * {"sentences": [string], "model_id"?: string} with 1..64 sentences of at
 * most 2000 characters each, and returns {"vectors", "dim", "model_id"}.
 * Responses for identical input are identical: the encoders are
 * deterministic inference-only code paths.
 */

import http from "node:http";

import type { Encoder } from "./encoder.js";

export const MAX_BATCH = 64;
export const MAX_SENTENCE_CHARS = 2000;

interface EmbedRequest {
  sentences: string[];
  model_id?: string;
}

function sendJson(res: http.ServerResponse, status: number, body: object): void {
  const payload = JSON.stringify(body);
  res.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(payload),
  });
  res.end(payload);
}

function validateEmbedRequest(body: unknown): EmbedRequest | string {
  if (typeof body !== "object" || body === null || Array.isArray(body)) {
    return "request body must be a JSON object";
  }
  const record = body as Record<string, unknown>;
  const sentences = record.sentences;
  if (!Array.isArray(sentences)) {
    return "\"sentences\" must be an array";
  }
  if (sentences.length < 1 || sentences.length > MAX_BATCH) {
    return `batch size must be 1..${MAX_BATCH}, got ${sentences.length}`;
  }
  for (const [index, sentence] of sentences.entries()) {
    if (typeof sentence !== "string" || sentence.length === 0) {
      return `sentence ${index} must be a non-empty string`;
    }
    if (sentence.length > MAX_SENTENCE_CHARS) {
      return `sentence ${index} exceeds ${MAX_SENTENCE_CHARS} characters`;
    }
  }
  if (record.model_id !== undefined && typeof record.model_id !== "string") {
    return "\"model_id\" must be a string when present";
  }
  return { sentences: sentences as string[], model_id: record.model_id as string | undefined };
}

function readBody(req: http.IncomingMessage, limit = 4 * 1024 * 1024): Promise<string> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on("data", (chunk: Buffer) => {
      size += chunk.length;
      if (size > limit) {
        reject(new Error("request body too large"));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on("end", () => resolve(Buffer.concat(chunks).toString("utf-8")));
    req.on("error", reject);
  });
}

export function createBridge(encoderLoading: Promise<Encoder>): http.Server {
  let encoder: Encoder | null = null;
  let loadError: Error | null = null;
  encoderLoading.then(
    (ready) => { encoder = ready; },
    (err: Error) => { loadError = err; },
  );

  return http.createServer(async (req, res) => {
    try {
      if (req.method === "GET" && req.url === "/health") {
        if (loadError) {
          sendJson(res, 503, { status: "error", error: loadError.message });
        } else if (encoder === null) {
          sendJson(res, 503, { status: "loading" });
        } else {
          sendJson(res, 200, {
            status: "ok", model_id: encoder.modelId, dim: encoder.dim,
          });
        }
        return;
      }

      if (req.method === "POST" && req.url === "/embed") {
        if (loadError) {
          sendJson(res, 503, { error: loadError.message });
          return;
        }
        if (encoder === null) {
          sendJson(res, 503, { error: "model is still loading" });
          return;
        }
        let parsed: unknown;
        try {
          parsed = JSON.parse(await readBody(req));
        } catch {
          sendJson(res, 400, { error: "body is not valid JSON" });
          return;
        }
        const request = validateEmbedRequest(parsed);
        if (typeof request === "string") {
          sendJson(res, 400, { error: request });
          return;
        }
        if (request.model_id !== undefined && request.model_id !== encoder.modelId) {
          sendJson(res, 400, {
            error: `this bridge serves "${encoder.modelId}", not "${request.model_id}"`,
          });
          return;
        }
        const vectors = await encoder.encode(request.sentences);
        sendJson(res, 200, {
          vectors, dim: encoder.dim, model_id: encoder.modelId,
        });
        return;
      }

      sendJson(res, 404, { error: `no route for ${req.method} ${req.url}` });
    } catch (err) {
      sendJson(res, 500, { error: (err as Error).message });
    }
  });
}
