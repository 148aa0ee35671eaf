/**
 * Fetch-and-display loop. The viewport is a plain <img> whose bytes always
 * come from the engine; dragging orbits the camera with debounced view
 * fetches, clicking forwards pixel coordinates with the current orbit
 * parameters. Stale responses are discarded by sequence number and at most
 * one fetch is outstanding at a time.
 */

import { ApiClient, ApiError } from "./api.js";
import { ViewerState, applyOrbitDrag, applyZoom } from "./state.js";

export const ORBIT_DEBOUNCE_MS = 60;
const POLL_INTERVAL_MS = 150;

export class Viewer {
  readonly image: HTMLImageElement;
  /** Raw bytes of the frame currently on screen. */
  lastFrame: Blob | null = null;
  private seq = 0;
  private applied = 0;
  private inFlight = false;
  private queued = false;
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;
  private objectUrl: string | null = null;
  onStatus: (message: string) => void = () => {};
  onStateChange: () => void = () => {};

  constructor(
    private api: ApiClient,
    private state: ViewerState,
    container: HTMLElement,
  ) {
    const doc = container.ownerDocument;
    this.image = doc.createElement("img");
    this.image.className = "viewport";
    this.image.draggable = false;
    container.appendChild(this.image);
    this.bindInput();
  }

  /** Immediate fetch of the current view; coalesces concurrent calls. */
  async refresh(): Promise<void> {
    if (!this.state.sessionId) return;
    if (this.inFlight) {
      this.queued = true;
      return;
    }
    const mySeq = ++this.seq;
    this.inFlight = true;
    try {
      const blob = await this.api.fetchView(this.state.sessionId, {
        yaw: this.state.yaw,
        pitch: this.state.pitch,
        dist: this.state.dist,
        overlay: this.state.overlay,
        res: this.state.resolution,
        group: this.state.overlay === "segments" && this.state.selectedGroup !== null
          ? this.state.selectedGroup : undefined,
      });
      if (mySeq >= this.applied) {
        this.applied = mySeq;
        this.showBlob(blob);
      }
    } catch (err) {
      this.onStatus(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      if (this.queued) {
        this.queued = false;
        void this.refresh();
      }
    }
  }

  /** Debounced refresh used while orbiting. */
  scheduleRefresh(): void {
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      void this.refresh();
    }, ORBIT_DEBOUNCE_MS);
  }

  private showBlob(blob: Blob): void {
    this.lastFrame = blob;
    const URLImpl = this.image.ownerDocument.defaultView?.URL ?? URL;
    if (typeof URLImpl.createObjectURL !== "function") return; // bare DOM shims
    const url = URLImpl.createObjectURL(blob);
    if (this.objectUrl) URLImpl.revokeObjectURL(this.objectUrl);
    this.objectUrl = url;
    this.image.src = url;
  }

  private pixelFromEvent(ev: MouseEvent): { x: number; y: number } {
    const rect = this.image.getBoundingClientRect();
    const scaleX = rect.width > 0 ? this.state.resolution / rect.width : 1;
    const scaleY = rect.height > 0 ? this.state.resolution / rect.height : 1;
    return {
      x: Math.floor((ev.clientX - rect.left) * scaleX),
      y: Math.floor((ev.clientY - rect.top) * scaleY),
    };
  }

  private bindInput(): void {
    let dragging = false;
    let moved = 0;
    let lastX = 0;
    let lastY = 0;

    this.image.addEventListener("mousedown", (ev) => {
      dragging = true;
      moved = 0;
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    this.image.addEventListener("mousemove", (ev) => {
      if (!dragging) return;
      const dx = ev.clientX - lastX;
      const dy = ev.clientY - lastY;
      moved += Math.abs(dx) + Math.abs(dy);
      lastX = ev.clientX;
      lastY = ev.clientY;
      applyOrbitDrag(this.state, dx, dy);
      this.onStateChange();
      this.scheduleRefresh();
    });
    const endDrag = () => { dragging = false; };
    this.image.addEventListener("mouseup", endDrag);
    this.image.addEventListener("mouseleave", endDrag);

    this.image.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      applyZoom(this.state, ev.deltaY, 1.0);
      this.onStateChange();
      this.scheduleRefresh();
    });

    this.image.addEventListener("click", (ev) => {
      if (moved > 4) return; // a drag, not a click
      void this.sendClick(this.pixelFromEvent(ev));
    });
  }

  async sendClick(pixel: { x: number; y: number }): Promise<void> {
    const state = this.state;
    if (!state.sessionId) return;
    if (state.status === "selecting") {
      this.onStatus("selection in progress");
      return; // the click action is gated; everything else stays live
    }
    try {
      await this.api.click(state.sessionId, {
        yaw: state.yaw,
        pitch: state.pitch,
        dist: state.dist,
        x: pixel.x,
        y: pixel.y,
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.onStatus("selection in progress");
      } else if (err instanceof ApiError && err.status === 422) {
        this.onStatus("click a surface point");
      } else {
        this.onStatus(err instanceof Error ? err.message : String(err));
      }
      return;
    }
    state.lastClick = pixel;
    state.status = "selecting";
    state.message = "selecting…";
    this.onStateChange();
    await this.pollUntilDone();
  }

  private async pollUntilDone(): Promise<void> {
    const state = this.state;
    if (!state.sessionId) return;
    for (;;) {
      await new Promise((resolve) => setTimeout(resolve, POLL_INTERVAL_MS));
      const remote = await this.api.getState(state.sessionId);
      if (remote.status === "ready") {
        state.status = "ready";
        state.message = `selection ready (${remote.cloud_points} cloud points)`;
        if (state.overlay === "none") state.overlay = "mask";
        this.onStateChange();
        await this.refresh();
        return;
      }
      if (remote.status === "error") {
        state.status = "error";
        state.message = remote.error ?? "selection failed";
        this.onStateChange();
        return;
      }
    }
  }
}
