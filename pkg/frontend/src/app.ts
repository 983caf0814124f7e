/** DOM wiring: viewport, timeline strip, prompt box, parameter panel. */

import { ApiClient, ApiError } from "./api.js";
import { FlightController, Timeline } from "./flight.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class SteeringApp {
  private api: ApiClient | null = null;
  private sessionId: string | null = null;
  private flight = new FlightController();
  private timeline = new Timeline();

  private viewport = el<HTMLImageElement>("viewport");
  private strip = el<HTMLDivElement>("timeline");
  private status = el<HTMLDivElement>("status");
  private toast = el<HTMLDivElement>("toast");
  private promptBox = el<HTMLTextAreaElement>("prompt");
  private pendingLabel = el<HTMLSpanElement>("pending");

  start(): void {
    el<HTMLButtonElement>("create").addEventListener("click", () => void this.createSession());
    el<HTMLButtonElement>("dispatch").addEventListener("click", () => void this.dispatch());
    document.addEventListener("keydown", (ev) => {
      if (ev.target instanceof HTMLTextAreaElement || ev.target instanceof HTMLInputElement) {
        return; // typing, not flying
      }
      if (ev.key === "Enter") {
        void this.dispatch();
        ev.preventDefault();
        return;
      }
      if (this.flight.keyDown(ev.key)) {
        this.renderPending();
        ev.preventDefault();
      }
    });
    this.promptBox.addEventListener("input", () => {
      this.flight.promptDraft = this.promptBox.value;
    });
    for (const key of ["sigma", "lambda", "t2"] as const) {
      el<HTMLInputElement>(`override-${key}`).addEventListener("change", (ev) => {
        const raw = (ev.target as HTMLInputElement).value.trim();
        if (raw === "") {
          this.flight.setOverride(key, undefined);
        } else if (key === "sigma" && raw.toLowerCase() === "inf") {
          this.flight.setOverride(key, "inf");
        } else {
          this.flight.setOverride(key, Number(raw));
        }
      });
    }
    el<HTMLInputElement>("move-step").addEventListener("change", (ev) => {
      this.flight.stepSizes.move = Number((ev.target as HTMLInputElement).value);
    });
    el<HTMLInputElement>("turn-step").addEventListener("change", (ev) => {
      this.flight.stepSizes.turnDeg = Number((ev.target as HTMLInputElement).value);
    });
    this.setStatus("no session — enter a prompt and press Create");
  }

  private setStatus(text: string): void {
    this.status.textContent = text;
  }

  private showToast(text: string): void {
    this.toast.textContent = text;
    this.toast.classList.add("visible");
    setTimeout(() => this.toast.classList.remove("visible"), 4000);
  }

  private renderPending(): void {
    const d = this.flight.pendingDelta;
    this.pendingLabel.textContent =
      `Δt=(${d.tx.toFixed(2)}, ${d.ty.toFixed(2)}, ${d.tz.toFixed(2)}) ` +
      `yaw=${d.yawDeg.toFixed(1)}° pitch=${d.pitchDeg.toFixed(1)}°`;
  }

  private async createSession(): Promise<void> {
    const base = el<HTMLInputElement>("base-url").value;
    const prompt = this.promptBox.value || "an endless coastal road";
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    this.api = new ApiClient(base);
    try {
      const created = await this.api.createSession({
        prompt,
        backend: el<HTMLSelectElement>("backend").value,
        config: { seed },
      });
      this.sessionId = created.session_id;
      this.flight = new FlightController(prompt, this.flight.stepSizes);
      this.timeline = new Timeline(0);
      this.strip.replaceChildren();
      this.showFrameData(created.image);
      this.addThumbnail(0, created.image);
      this.setStatus(`session ${created.session_id.slice(0, 8)} — frame 0`);
    } catch (err) {
      this.showToast(`create failed: ${String(err)}`);
    }
  }

  private showFrameData(base64Png: string): void {
    this.viewport.src = `data:image/png;base64,${base64Png}`;
  }

  private addThumbnail(index: number, base64Png: string): void {
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${base64Png}`;
    img.title = `frame ${index}`;
    img.addEventListener("click", () => void this.scrub(index));
    this.strip.appendChild(img);
    this.strip.scrollLeft = this.strip.scrollWidth;
  }

  private async scrub(index: number): Promise<void> {
    if (!this.api || !this.sessionId) return;
    const target = this.timeline.scrub(index);
    if (target === null) return;
    this.viewport.src = this.api.frameUrl(this.sessionId, target);
    this.setStatus(this.timeline.isLive
      ? `frame ${target} (live)`
      : `frame ${target} (review; steering resumes from ${this.timeline.latestIndex})`);
  }

  private async dispatch(): Promise<void> {
    if (!this.api || !this.sessionId) {
      this.showToast("create a session first");
      return;
    }
    const request = this.flight.dispatch();
    if (request === null) return; // a step is already in flight
    this.setStatus("generating…");
    try {
      const frame = await this.api.step(this.sessionId, request);
      this.flight.onResponse();
      this.timeline.advance(frame.frame_index);
      this.showFrameData(frame.image);
      this.addThumbnail(frame.frame_index, frame.image);
      this.renderPending();
      this.setStatus(`frame ${frame.frame_index} — holes ${(frame.hole_fraction * 100).toFixed(1)}%`);
    } catch (err) {
      this.flight.onError();
      this.renderPending();
      if (err instanceof ApiError && err.status === 409) {
        this.setStatus("generating… (server busy)");
      } else {
        this.setStatus("idle");
        this.showToast(`step failed: ${String(err)}`);
      }
    }
  }
}
