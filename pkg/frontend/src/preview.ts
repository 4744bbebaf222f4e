// Live preview loop: debounced decode requests with one request in flight,
// coalescing while busy, and stale responses discarded by sequence number.

export interface PreviewCallbacks {
  onImage: (blob: Blob, seq: number) => void;
  onError: (message: string) => void;
}

export class PreviewLoop {
  private seq = 0;
  private renderedSeq = 0;
  private inFlight = false;
  private pendingBody: unknown | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private decode: (body: unknown) => Promise<Blob>,
    private callbacks: PreviewCallbacks,
    public debounceMs = 50,
  ) {}

  /** Schedule a preview refresh; rapid calls collapse into one request. */
  request(body: unknown): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.issue(body);
    }, this.debounceMs);
  }

  private issue(body: unknown): void {
    if (this.inFlight) {
      this.pendingBody = body;
      return;
    }
    const seq = ++this.seq;
    this.inFlight = true;
    this.decode(body)
      .then((blob) => {
        if (seq > this.renderedSeq) {
          this.renderedSeq = seq;
          this.callbacks.onImage(blob, seq);
        }
      })
      .catch((err) => {
        this.callbacks.onError(err instanceof Error ? err.message : String(err));
      })
      .finally(() => {
        this.inFlight = false;
        if (this.pendingBody !== null) {
          const next = this.pendingBody;
          this.pendingBody = null;
          this.issue(next);
        }
      });
  }

  get lastRenderedSeq(): number {
    return this.renderedSeq;
  }

  get issuedCount(): number {
    return this.seq;
  }
}
