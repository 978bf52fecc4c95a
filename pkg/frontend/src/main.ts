/** Browser entry point: open the run named in the URL hash, or the first run. */

import { ApiClient } from './api.js';
import { mount } from './app.js';

async function boot(): Promise<void> {
  const root = document.getElementById('app');
  if (!root) return;
  const app = mount(root);
  const client = new ApiClient('');
  const runId = window.location.hash.slice(1);
  if (runId) {
    await app.open(runId);
    return;
  }
  const runs = await client.listRuns();
  if (runs.length) {
    await app.open(runs[0].run_id);
  } else {
    root.textContent = 'No runs yet. Start one with: bikescape run --scene <png> --scenario <n>';
  }
}

void boot();
