/**
 * Control panel: overlay switcher, threshold slider, k stepper, the
 * auto-segment button with per-group color chips, and export downloads.
 * Controls stay responsive during an in-flight selection.
 */

import { ApiClient } from "./api.js";
import { ViewerState, clampThreshold, isOverlayMode, OVERLAY_MODES } from "./state.js";
import { Viewer } from "./viewer.js";

export class Panel {
  readonly root: HTMLElement;
  readonly thresholdSlider: HTMLInputElement;
  readonly thresholdLabel: HTMLElement;
  readonly kInput: HTMLInputElement;
  readonly overlayButtons = new Map<string, HTMLButtonElement>();
  readonly segmentButton: HTMLButtonElement;
  readonly chipRow: HTMLElement;
  readonly statusLine: HTMLElement;
  private patchTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private api: ApiClient,
    private state: ViewerState,
    private viewer: Viewer,
    container: HTMLElement,
  ) {
    const doc = container.ownerDocument;
    this.root = doc.createElement("div");
    this.root.className = "panel";
    container.appendChild(this.root);

    this.statusLine = doc.createElement("div");
    this.statusLine.className = "status";
    this.root.appendChild(this.statusLine);

    const overlayRow = doc.createElement("div");
    overlayRow.className = "overlay-row";
    for (const mode of OVERLAY_MODES) {
      const button = doc.createElement("button");
      button.textContent = mode;
      button.dataset.overlay = mode;
      button.addEventListener("click", () => this.setOverlay(mode));
      overlayRow.appendChild(button);
      this.overlayButtons.set(mode, button);
    }
    this.root.appendChild(overlayRow);

    const thresholdRow = doc.createElement("div");
    this.thresholdLabel = doc.createElement("span");
    this.thresholdSlider = doc.createElement("input");
    this.thresholdSlider.type = "range";
    this.thresholdSlider.min = "0";
    this.thresholdSlider.max = "1";
    this.thresholdSlider.step = "0.01";
    this.thresholdSlider.value = String(state.threshold);
    this.thresholdSlider.addEventListener("input", () => {
      this.onThresholdInput(Number(this.thresholdSlider.value));
    });
    thresholdRow.appendChild(this.thresholdSlider);
    thresholdRow.appendChild(this.thresholdLabel);
    this.root.appendChild(thresholdRow);

    const kRow = doc.createElement("div");
    this.kInput = doc.createElement("input");
    this.kInput.type = "number";
    this.kInput.min = "1";
    this.kInput.step = "2";
    this.kInput.value = String(state.k);
    this.kInput.addEventListener("change", () => {
      void this.onKChange(Number(this.kInput.value));
    });
    kRow.appendChild(this.kInput);
    this.root.appendChild(kRow);

    this.segmentButton = doc.createElement("button");
    this.segmentButton.textContent = "Auto-segment";
    this.segmentButton.className = "segment-button";
    this.segmentButton.addEventListener("click", () => void this.runSegment());
    this.root.appendChild(this.segmentButton);

    this.chipRow = doc.createElement("div");
    this.chipRow.className = "chips";
    this.root.appendChild(this.chipRow);

    const exportRow = doc.createElement("div");
    for (const kind of ["uv", "cloud", "masks"] as const) {
      const button = doc.createElement("button");
      button.textContent = `export ${kind}`;
      button.dataset.export = kind;
      button.addEventListener("click", () => void this.download(kind));
      exportRow.appendChild(button);
    }
    this.root.appendChild(exportRow);
    this.render();
  }

  render(): void {
    this.statusLine.textContent = this.state.message;
    this.thresholdLabel.textContent = ` threshold ${this.state.threshold.toFixed(2)}`;
    for (const [mode, button] of this.overlayButtons) {
      button.classList.toggle("active", mode === this.state.overlay);
    }
  }

  setOverlay(mode: string): void {
    if (!isOverlayMode(mode)) return;
    this.state.overlay = mode;
    if (mode !== "segments") this.state.selectedGroup = null;
    this.render();
    void this.viewer.refresh();
  }

  /** Slider drags re-threshold on the server; no new click, no re-lift. */
  onThresholdInput(value: number): void {
    this.state.threshold = clampThreshold(value);
    this.render();
    if (this.patchTimer !== null) clearTimeout(this.patchTimer);
    this.patchTimer = setTimeout(() => {
      this.patchTimer = null;
      void this.pushParams({ threshold: this.state.threshold });
    }, 80);
  }

  private async onKChange(k: number): Promise<void> {
    if (!Number.isFinite(k) || k < 1 || k % 2 === 0) {
      this.state.message = "k must be an odd positive integer";
      this.render();
      return;
    }
    this.state.k = k;
    await this.pushParams({ k });
  }

  private async pushParams(params: { threshold?: number; k?: number }): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      await this.api.patchParams(this.state.sessionId, params);
      await this.viewer.refresh();
    } catch (err) {
      this.state.message = err instanceof Error ? err.message : String(err);
      this.render();
    }
  }

  async runSegment(): Promise<void> {
    if (!this.state.sessionId) return;
    this.state.message = "segmenting…";
    this.render();
    try {
      const groups = await this.api.segment(this.state.sessionId);
      this.state.groups = groups.map((g) => ({
        id: g.id,
        color: g.color as [number, number, number],
      }));
      this.state.message = `${groups.length} material groups`;
      this.renderChips();
      this.state.overlay = "segments";
      this.state.selectedGroup = null;
      this.render();
      await this.viewer.refresh();
    } catch (err) {
      this.state.message = err instanceof Error ? err.message : String(err);
      this.render();
    }
  }

  renderChips(): void {
    const doc = this.chipRow.ownerDocument;
    this.chipRow.textContent = "";
    for (const group of this.state.groups) {
      const chip = doc.createElement("button");
      chip.className = "chip";
      chip.dataset.group = String(group.id);
      chip.style.backgroundColor =
        `rgb(${group.color[0]},${group.color[1]},${group.color[2]})`;
      chip.title = `group ${group.id}`;
      chip.addEventListener("click", () => {
        this.state.overlay = "segments";
        this.state.selectedGroup = group.id;
        this.render();
        void this.viewer.refresh();
      });
      this.chipRow.appendChild(chip);
    }
  }

  private async download(kind: "uv" | "cloud" | "masks"): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      const blob = await this.api.exportFile(this.state.sessionId, kind);
      const doc = this.root.ownerDocument;
      const URLImpl = doc.defaultView?.URL ?? URL;
      const names = { uv: "atlas.pgm", cloud: "cloud.msc", masks: "masks.zip" };
      const anchor = doc.createElement("a");
      if (typeof URLImpl.createObjectURL === "function") {
        anchor.href = URLImpl.createObjectURL(blob);
      }
      anchor.download = names[kind];
      anchor.click();
      this.state.message = `downloaded ${names[kind]} (${blob.size} bytes)`;
    } catch (err) {
      this.state.message = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }
}
