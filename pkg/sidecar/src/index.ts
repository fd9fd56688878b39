import { loadConfig } from "./config.js";
import { createApp } from "./server.js";

const config = loadConfig();
const { app } = createApp(config);
app.listen(config.port, () => {
  console.log(
    `sidecar listening on :${config.port} (grid ${config.grid}, steps ${config.totalSteps})`,
  );
});
