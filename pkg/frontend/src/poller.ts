/** Simple fixed-interval polling; the desk-scale alternative to push. */

export const POLL_INTERVAL_MS = 2000;

export interface Poller {
  stop(): void;
}

export function startPolling(tick: () => Promise<void>, intervalMs: number = POLL_INTERVAL_MS): Poller {
  let stopped = false;
  let inFlight = false;
  const handle = setInterval(async () => {
    if (stopped || inFlight) return;
    inFlight = true;
    try {
      await tick();
    } catch {
      // polling errors are transient; the next tick retries
    } finally {
      inFlight = false;
    }
  }, intervalMs);
  return {
    stop() {
      stopped = true;
      clearInterval(handle);
    },
  };
}
