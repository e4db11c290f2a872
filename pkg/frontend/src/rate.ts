/**
 * Per-key send-rate limiter: leading edge passes immediately, bursts coalesce
 * to the newest frame, and a trailing timer guarantees that the last value in
 * a burst is always delivered.  With the default interval this caps each
 * message type at 20 frames per second no matter how fast the UI events fire.
 */

export type Clock = () => number;
export type Scheduler = (cb: () => void, delayMs: number) => void;

interface KeyState {
  lastSent: number;
  pending: string | null;
  timerArmed: boolean;
}

export class RateLimiter {
  private keys = new Map<string, KeyState>();

  constructor(
    private emit: (frame: string) => void,
    private intervalMs = 50,
    private now: Clock = () => Date.now(),
    private schedule: Scheduler = (cb, ms) => { setTimeout(cb, ms); },
  ) {}

  /** Queue one frame under `key`; newer frames under the same key win. */
  push(key: string, frame: string): void {
    let st = this.keys.get(key);
    if (st === undefined) {
      st = { lastSent: -Infinity, pending: null, timerArmed: false };
      this.keys.set(key, st);
    }
    const t = this.now();
    if (!st.timerArmed && t - st.lastSent >= this.intervalMs) {
      st.lastSent = t;
      this.emit(frame);
      return;
    }
    st.pending = frame;
    if (!st.timerArmed) {
      st.timerArmed = true;
      const wait = Math.max(0, st.lastSent + this.intervalMs - t);
      this.schedule(() => this.fire(st!), wait);
    }
  }

  private fire(st: KeyState): void {
    st.timerArmed = false;
    if (st.pending !== null) {
      const frame = st.pending;
      st.pending = null;
      st.lastSent = this.now();
      this.emit(frame);
    }
  }
}
