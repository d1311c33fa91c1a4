/** Serial task queue: at most one task runs at a time, later submissions
 * wait their turn in FIFO order. A failed task rejects its own promise and
 * never blocks the tasks behind it. */

export class SerialQueue {
  private tail: Promise<unknown> = Promise.resolve();
  private waiting = 0;
  private running = false;

  /** Number of tasks queued behind the running one. */
  get depth(): number {
    return this.waiting;
  }

  get busy(): boolean {
    return this.running || this.waiting > 0;
  }

  submit<T>(task: () => Promise<T>): Promise<T> {
    this.waiting++;
    const result = this.tail.then(async () => {
      this.waiting--;
      this.running = true;
      try {
        return await task();
      } finally {
        this.running = false;
      }
    });
    // keep the chain alive whether the task resolved or rejected
    this.tail = result.catch(() => undefined);
    return result;
  }
}
