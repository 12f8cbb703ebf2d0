/**
 * Debounced, sequence-numbered dispatch of track requests.
 *
 * Dragging an endpoint fires a request per mouse move; the server only ever
 * needs the newest one.  Every request() bumps a sequence number and restarts
 * a debounce timer.  When the timer fires the newest query is issued, but
 * never concurrently: while one request is in flight later queries wait in a
 * single slot that keeps only the latest.  A response is delivered only if
 * its sequence number is still current, so stale responses (and stale errors)
 * vanish instead of overwriting newer state.
 */

export interface TrackQuery<P> {
  endpoints: [[number, number], [number, number]];
  params?: P;
}

export type Runner<P, R> = (query: TrackQuery<P>) => Promise<R>;

export class TrackScheduler<P, R> {
  /** Largest concurrent request count ever observed; 1 when behaving. */
  maxInFlight = 0;
  /** Requests actually sent to the runner, for coalescing assertions. */
  issued = 0;

  private seq = 0;
  private flying = 0;
  private inFlight = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: { seq: number; query: TrackQuery<P> } | null = null;

  constructor(
    private readonly run: Runner<P, R>,
    private readonly onResult: (result: R, seq: number) => void,
    private readonly onError: (error: unknown, seq: number) => void,
    private readonly debounceMs = 150,
  ) {}

  /** Queue a query, superseding any not-yet-delivered one. Returns its sequence number. */
  request(query: TrackQuery<P>): number {
    const seq = ++this.seq;
    this.pending = { seq, query };
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.launch();
    }, this.debounceMs);
    return seq;
  }

  /** Drop the pending query and stop the timer; in-flight responses still settle (and are stale). */
  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.pending = null;
    this.seq++;
  }

  get busy(): boolean {
    return this.inFlight || this.timer !== null || this.pending !== null;
  }

  private launch(): void {
    if (this.inFlight || this.pending === null) return;
    const { seq, query } = this.pending;
    this.pending = null;
    this.inFlight = true;
    this.flying++;
    this.issued++;
    if (this.flying > this.maxInFlight) this.maxInFlight = this.flying;
    this.run(query).then(
      (result) => this.settle(seq, () => this.onResult(result, seq)),
      (error) => this.settle(seq, () => this.onError(error, seq)),
    );
  }

  private settle(seq: number, deliver: () => void): void {
    this.inFlight = false;
    this.flying--;
    if (seq === this.seq) deliver();
    // A query that arrived mid-flight waits on the slot, not the timer.
    if (this.timer === null) this.launch();
  }
}
