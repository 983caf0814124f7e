/** Flight-control state machine, kept free of DOM so it is unit-testable.
 *
 * Key presses accumulate a relative pose delta; a dispatch snapshots and
 * clears it, building the exact step-request payload.  At most one request
 * is outstanding; a failed dispatch restores the snapshot so nothing the
 * pilot typed is lost.  Every payload actually sent is appended to
 * `requestLog`, which replayed against a fresh session must reproduce the
 * same frames.
 *
 * Camera convention (matches the service): the pose maps current-camera
 * coordinates to next-camera coordinates, so flying forward by s sends
 * translation (0, 0, -s).  W/S forward/back, A/D strafe, Q/E down/up,
 * arrow keys yaw/pitch.
 */

import type { StepOverrides, StepRequest } from "./api.js";

export interface StepSizes {
  move: number;
  turnDeg: number;
}

interface PoseDelta {
  tx: number;
  ty: number;
  tz: number;
  yawDeg: number;
  pitchDeg: number;
}

const ZERO_DELTA: PoseDelta = { tx: 0, ty: 0, tz: 0, yawDeg: 0, pitchDeg: 0 };

export class FlightController {
  stepSizes: StepSizes;
  promptDraft = "";
  inFlight = false;
  readonly requestLog: StepRequest[] = [];

  private delta: PoseDelta = { ...ZERO_DELTA };
  private sentPrompt: string;
  private pendingOverrides: StepOverrides = {};
  private snapshot: StepRequest | null = null;

  constructor(initialPrompt = "", stepSizes: StepSizes = { move: 0.15, turnDeg: 3 }) {
    this.sentPrompt = initialPrompt;
    this.promptDraft = initialPrompt;
    this.stepSizes = { ...stepSizes };
  }

  /** Accumulate one key press; returns false for keys that are not bound. */
  keyDown(key: string): boolean {
    const m = this.stepSizes.move;
    const r = this.stepSizes.turnDeg;
    switch (key.length === 1 ? key.toLowerCase() : key) {
      case "w": this.delta.tz -= m; break;     // camera forward
      case "s": this.delta.tz += m; break;     // camera back
      case "a": this.delta.tx += m; break;     // strafe left
      case "d": this.delta.tx -= m; break;     // strafe right
      case "q": this.delta.ty -= m; break;     // camera down (y points down)
      case "e": this.delta.ty += m; break;     // camera up
      case "ArrowLeft": this.delta.yawDeg += r; break;
      case "ArrowRight": this.delta.yawDeg -= r; break;
      case "ArrowUp": this.delta.pitchDeg -= r; break;
      case "ArrowDown": this.delta.pitchDeg += r; break;
      default: return false;
    }
    return true;
  }

  get pendingDelta(): Readonly<PoseDelta> {
    return this.delta;
  }

  hasPendingMotion(): boolean {
    return Object.values(this.delta).some((v) => v !== 0);
  }

  setOverride(key: keyof StepOverrides, value: number | string | undefined): void {
    if (value === undefined || value === "") {
      delete this.pendingOverrides[key];
    } else {
      this.pendingOverrides[key] = value as never;
    }
  }

  /**
   * Build the next step request and lock the controller, or return null when
   * a step is already in flight.  The pose delta, prompt edit, and pending
   * parameter overrides are consumed by this call.
   */
  dispatch(): StepRequest | null {
    if (this.inFlight) return null;
    const request: StepRequest = {
      pose: {
        euler: [this.delta.yawDeg, this.delta.pitchDeg, 0],
        translation: [this.delta.tx, this.delta.ty, this.delta.tz],
      },
    };
    if (this.promptDraft !== this.sentPrompt) {
      request.prompt = this.promptDraft;
    }
    if (Object.keys(this.pendingOverrides).length > 0) {
      request.overrides = { ...this.pendingOverrides };
    }
    this.snapshot = request;
    this.delta = { ...ZERO_DELTA };
    this.pendingOverrides = {};
    this.inFlight = true;
    return request;
  }

  /** The dispatched step landed; the request becomes part of the log. */
  onResponse(): void {
    if (this.snapshot) {
      this.requestLog.push(this.snapshot);
      if (this.snapshot.prompt !== undefined) {
        this.sentPrompt = this.snapshot.prompt;
      }
    }
    this.snapshot = null;
    this.inFlight = false;
  }

  /** Network failure or 409: unlock and put the pilot's input back. */
  onError(): void {
    const req = this.snapshot;
    if (req) {
      this.delta.tx += req.pose.translation[0];
      this.delta.ty += req.pose.translation[1];
      this.delta.tz += req.pose.translation[2];
      this.delta.yawDeg += req.pose.euler[0];
      this.delta.pitchDeg += req.pose.euler[1];
      if (req.overrides) {
        this.pendingOverrides = { ...req.overrides, ...this.pendingOverrides };
      }
    }
    this.snapshot = null;
    this.inFlight = false;
  }
}

/** Read-only review of stored frames; steering always resumes from the latest. */
export class Timeline {
  private viewIndex = 0;

  constructor(public latestIndex = 0) {}

  advance(latest: number): void {
    this.latestIndex = latest;
    this.viewIndex = latest;
  }

  /** Returns the frame index to display, or null when out of range. */
  scrub(index: number): number | null {
    if (!Number.isInteger(index) || index < 0 || index > this.latestIndex) return null;
    this.viewIndex = index;
    return index;
  }

  get current(): number {
    return this.viewIndex;
  }

  get isLive(): boolean {
    return this.viewIndex === this.latestIndex;
  }
}
