/**
 * Application assembly, DOM-injectable so tests can drive it under jsdom.
 * The UI computes nothing itself: every displayed pixel, mask, heatmap and
 * group color comes from engine responses through the ApiClient gateway.
 */

import { ApiClient } from "./api.js";
import { Panel } from "./panel.js";
import { initialState, ViewerState } from "./state.js";
import { Viewer } from "./viewer.js";

export interface AppOptions {
  baseUrl: string;
  assetId: string;
  resolution?: number;
  sessionConfig?: object;
  fetchFn?: typeof fetch;
}

export interface App {
  api: ApiClient;
  state: ViewerState;
  viewer: Viewer;
  panel: Panel;
  ready: Promise<void>;
}

export function createApp(root: HTMLElement, options: AppOptions): App {
  const api = new ApiClient(options.baseUrl, options.fetchFn);
  const state = initialState(options.resolution ?? 256);
  const doc = root.ownerDocument;

  const layout = doc.createElement("div");
  layout.className = "app";
  root.appendChild(layout);
  const viewerBox = doc.createElement("div");
  viewerBox.className = "viewer-box";
  layout.appendChild(viewerBox);

  const viewer = new Viewer(api, state, viewerBox);
  const panel = new Panel(api, state, viewer, layout);
  viewer.onStatus = (message) => {
    state.message = message;
    panel.render();
  };
  viewer.onStateChange = () => panel.render();

  const ready = (async () => {
    state.sessionId = await api.createSession(options.assetId, options.sessionConfig);
    state.message = `session ${state.sessionId} on ${options.assetId}`;
    panel.render();
    await viewer.refresh();
  })();

  return { api, state, viewer, panel, ready };
}
