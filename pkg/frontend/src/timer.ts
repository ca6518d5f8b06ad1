/** Live task timer. Continuous by design: the protocol measures
 * uninterrupted task time, so there is no pause control. */

export class LiveTimer {
  private startedAt: number;
  private handle: ReturnType<typeof setInterval> | null = null;

  constructor(private element: HTMLElement, now: number = Date.now()) {
    this.startedAt = now;
  }

  start(): void {
    this.render();
    this.handle = setInterval(() => this.render(), 1000);
  }

  stop(): number {
    if (this.handle !== null) clearInterval(this.handle);
    this.handle = null;
    return this.elapsedSeconds();
  }

  elapsedSeconds(): number {
    return (Date.now() - this.startedAt) / 1000;
  }

  private render(): void {
    const total = Math.floor(this.elapsedSeconds());
    const minutes = Math.floor(total / 60);
    const seconds = total % 60;
    this.element.textContent = `${minutes}:${String(seconds).padStart(2, "0")}`;
  }
}
