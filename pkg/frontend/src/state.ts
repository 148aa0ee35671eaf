import type { OverlayMode } from "./api.js";

export const OVERLAY_MODES: OverlayMode[] = ["none", "mask", "heatmap", "segments"];

export interface ViewerState {
  sessionId: string | null;
  yaw: number;
  pitch: number;
  dist: number;
  overlay: OverlayMode;
  threshold: number;
  k: number;
  resolution: number;
  selectedGroup: number | null;
  lastClick: { x: number; y: number } | null;
  status: "idle" | "selecting" | "ready" | "error";
  message: string;
  groups: { id: number; color: [number, number, number] }[];
}

export function initialState(resolution = 256): ViewerState {
  return {
    sessionId: null,
    yaw: 30,
    pitch: 20,
    dist: 0, // 0 = let the server pick its default orbit distance
    overlay: "none",
    threshold: 0.5,
    k: 9,
    resolution,
    selectedGroup: null,
    lastClick: null,
    status: "idle",
    message: "",
    groups: [],
  };
}

export function clampThreshold(value: number): number {
  if (Number.isNaN(value)) return 0.5;
  return Math.min(1, Math.max(0, value));
}

export function isOverlayMode(value: string): value is OverlayMode {
  return (OVERLAY_MODES as string[]).includes(value);
}

export function applyOrbitDrag(state: ViewerState, dxPx: number, dyPx: number): void {
  state.yaw = (state.yaw + dxPx * 0.4) % 360;
  state.pitch = Math.min(85, Math.max(-85, state.pitch - dyPx * 0.4));
}

export function applyZoom(state: ViewerState, wheelDelta: number, baseDist: number): void {
  const current = state.dist || baseDist;
  const factor = Math.exp(wheelDelta * 0.001);
  state.dist = Math.max(0.01, current * factor);
}
