// Minimal surface of the optional transformers.js dependency; installed
// only where real checkpoints are served (see README).
declare module "@huggingface/transformers" {
  export function pipeline(task: string, modelId: string): Promise<unknown>;
}
