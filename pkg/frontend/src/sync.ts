import type { SceneStore } from "./store.js";
import type {
  InteractionRequest,
  InteractionResponse,
  StateSnapshot,
  Vec3,
} from "./types.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;
export type TimerFn = (fn: () => void, ms: number) => unknown;
export type ClearTimerFn = (handle: unknown) => void;

export interface SyncOptions {
  baseUrl?: string;
  intervalMs?: number;
  fetchFn?: FetchFn;
  setTimer?: TimerFn;
  clearTimer?: ClearTimerFn;
  onError?: (err: unknown) => void;
}

/**
 * Polls GET /state on a fixed interval and folds snapshots into the store;
 * posts user interactions as JSON to POST /interact.
 *
 * fetch and timers are injectable so tests can drive it synchronously.
 */
export class SyncClient {
  readonly deviceId: number;
  private readonly store: SceneStore;
  private readonly baseUrl: string;
  private readonly intervalMs: number;
  private readonly fetchFn: FetchFn;
  private readonly setTimer: TimerFn;
  private readonly clearTimer: ClearTimerFn;
  private readonly onError: (err: unknown) => void;
  private timer: unknown = null;
  private running = false;

  constructor(deviceId: number, store: SceneStore, opts: SyncOptions = {}) {
    this.deviceId = deviceId;
    this.store = store;
    this.baseUrl = (opts.baseUrl ?? "").replace(/\/$/, "");
    this.intervalMs = opts.intervalMs ?? 250;
    this.fetchFn = opts.fetchFn ?? ((...args) => fetch(...args));
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as never));
    this.onError = opts.onError ?? (() => undefined);
  }

  start(): void {
    if (this.running) return;
    this.running = true;
    void this.tick();
  }

  stop(): void {
    this.running = false;
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
  }

  /** One poll cycle; exposed for tests and awaited internally. */
  async pollOnce(): Promise<void> {
    const res = await this.fetchFn(`${this.baseUrl}/state`);
    if (!res.ok) {
      throw new Error(`GET /state failed: ${res.status}`);
    }
    const snap = (await res.json()) as StateSnapshot;
    this.store.applySnapshot(snap);
  }

  async register(position: Vec3,
                 line?: InteractionRequest["line"],
                 ): Promise<InteractionResponse> {
    const body: InteractionRequest = {
      device_id: this.deviceId,
      op: "register",
      position,
    };
    if (line) body.line = line;
    return this.post(body);
  }

  async manipulate(voId: number, position: Vec3): Promise<InteractionResponse> {
    return this.post({
      device_id: this.deviceId,
      op: "manipulate",
      vo_id: voId,
      position,
    });
  }

  private async post(body: InteractionRequest): Promise<InteractionResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/interact`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      throw new Error(`POST /interact failed: ${res.status}`);
    }
    const out = (await res.json()) as InteractionResponse;
    this.store.applyLocalUpdate({
      id: out.vo_id,
      position: body.position,
      version: out.version,
      owner_device: this.deviceId,
      cell: [0, 0, 0],
    });
    return out;
  }

  private async tick(): Promise<void> {
    if (!this.running) return;
    try {
      await this.pollOnce();
    } catch (err) {
      this.onError(err);
    }
    if (this.running) {
      this.timer = this.setTimer(() => void this.tick(), this.intervalMs);
    }
  }
}
