import { loadEncoder } from "./encoder.js";
import { createBridge } from "./server.js";

const port = Number(process.env.BRIDGE_PORT ?? 8901);
const modelId = process.env.BRIDGE_MODEL ?? "hash:384";

const encoderLoading = loadEncoder(modelId);
encoderLoading.then(
  (encoder) => console.log(
    `encoder ready: ${encoder.modelId} (dim ${encoder.dim})`,
  ),
  (err: Error) => console.error(`encoder failed to load: ${err.message}`),
);

const server = createBridge(encoderLoading);
server.listen(port, () => {
  console.log(`embedding bridge listening on :${port} (model ${modelId})`);
});
