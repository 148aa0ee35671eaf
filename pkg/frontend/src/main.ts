import { createApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const app = createApp(document.getElementById("app")!, {
  baseUrl: params.get("engine") ?? "http://127.0.0.1:8799",
  assetId: params.get("asset") ?? "demo",
  resolution: Number(params.get("res") ?? "256"),
});
app.ready.catch((err) => {
  const el = document.getElementById("app")!;
  el.textContent = `failed to start: ${err}`;
});
