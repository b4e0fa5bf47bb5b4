/**
 * Latest-wins request scheduler: at most one render request is ever in
 * flight; interaction events overwrite the pending request rather than
 * queueing, and a fresh request fires as soon as the active one settles.
 */

export interface LoopStats {
  started: number;
  completed: number;
  failed: number;
  dropped: number;
  maxInFlight: number;
}

export class RenderLoop<TReq, TRes> {
  private pending: TReq | null = null;
  private inFlight = 0;
  readonly stats: LoopStats = {
    started: 0,
    completed: 0,
    failed: 0,
    dropped: 0,
    maxInFlight: 0,
  };

  constructor(
    private send: (req: TReq) => Promise<TRes>,
    private onResult: (res: TRes, req: TReq) => void,
    private onError: (err: unknown) => void = () => {},
  ) {}

  /** Submit the newest desired state; an older pending one is dropped. */
  request(req: TReq): void {
    if (this.pending !== null) this.stats.dropped++;
    this.pending = req;
    this.pump();
  }

  get busy(): boolean {
    return this.inFlight > 0;
  }

  private pump(): void {
    if (this.inFlight > 0 || this.pending === null) return;
    const req = this.pending;
    this.pending = null;
    this.inFlight++;
    this.stats.started++;
    this.stats.maxInFlight = Math.max(this.stats.maxInFlight, this.inFlight);
    this.send(req)
      .then((res) => {
        this.stats.completed++;
        this.onResult(res, req);
      })
      .catch((err) => {
        this.stats.failed++;
        this.onError(err);
      })
      .finally(() => {
        this.inFlight--;
        this.pump();
      });
  }
}
