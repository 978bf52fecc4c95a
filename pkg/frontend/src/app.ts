/** Page shell: run picker, live run detail with 2s polling, checkpoint panel
 * or candidate gallery depending on state, and the per-scene scenario grid.
 * The rendered view always tracks the latest server version; any stale
 * mutation surfaces a banner until the planner refreshes.
 */

import { ApiClient, ApiError } from './api.js';
import { renderCandidateGallery } from './components/candidateGallery.js';
import { renderCheckpointPanel } from './components/checkpointPanel.js';
import { renderScenarioGrid, type FinalizedDesign } from './components/scenarioGrid.js';
import { startPolling, type Poller } from './poller.js';
import { liveArtifact, type RunView } from './types.js';

export class App {
  private run: RunView | null = null;
  private poller: Poller | null = null;
  private staleError: ApiError | null = null;

  private readonly status: HTMLElement;
  private readonly banner: HTMLElement;
  private readonly panel: HTMLElement;
  private readonly gallery: HTMLElement;
  private readonly grid: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
  ) {
    root.innerHTML = '';
    this.banner = this.section('app-banner');
    this.status = this.section('run-status');
    this.panel = this.section('panel-host');
    this.gallery = this.section('gallery-host');
    this.grid = this.section('grid-host');
  }

  private section(className: string): HTMLElement {
    const el = document.createElement('div');
    el.className = className;
    this.root.appendChild(el);
    return el;
  }

  async open(runId: string): Promise<void> {
    this.poller?.stop();
    this.staleError = null;
    await this.refresh(runId);
    this.poller = startPolling(async () => {
      if (this.run) await this.refresh(this.run.run_id);
    });
  }

  stop(): void {
    this.poller?.stop();
  }

  async refresh(runId: string): Promise<void> {
    const latest = await this.client.getRun(runId);
    const hadConflict = this.staleError !== null;
    const changed = !this.run || this.run.version !== latest.version;
    this.run = latest;
    this.staleError = null;
    if (changed || hadConflict) await this.render();
  }

  private onUpdated = (run: RunView): void => {
    this.run = run;
    this.staleError = null;
    void this.render();
  };

  private onConflict = (error: ApiError): void => {
    this.staleError = error;
    this.renderBanner();
  };

  private renderBanner(): void {
    this.banner.innerHTML = '';
    if (!this.staleError) return;
    const note = document.createElement('div');
    note.className = 'stale-banner';
    note.setAttribute('role', 'alert');
    note.textContent = `Stale view: ${this.staleError.message}`;
    const refresh = document.createElement('button');
    refresh.dataset.action = 'refresh-run';
    refresh.textContent = 'Refresh';
    refresh.addEventListener('click', () => {
      if (this.run) void this.refresh(this.run.run_id);
    });
    note.appendChild(refresh);
    this.banner.appendChild(note);
  }

  private async render(): Promise<void> {
    const run = this.run;
    if (!run) return;
    this.renderBanner();

    this.status.innerHTML = '';
    const header = document.createElement('header');
    header.className = 'run-header';
    const title = document.createElement('h1');
    title.textContent = `Run ${run.run_id}`;
    const meta = document.createElement('p');
    meta.dataset.role = 'run-meta';
    meta.textContent =
      `state ${run.state} · scenario DS${run.scenario_id} · round ${run.round}` +
      ` · v${run.version}` +
      (run.revision ? ` · revision ${run.revision}` : '');
    header.append(title, meta);
    this.status.appendChild(header);

    this.panel.innerHTML = '';
    this.gallery.innerHTML = '';

    if (run.checkpoint && run.checkpoint !== 'selection') {
      renderCheckpointPanel(this.panel, this.client, run, {
        onUpdated: this.onUpdated,
        onConflict: this.onConflict,
      });
    }

    if (run.state === 'AwaitingExpertPick' || run.state === 'Finalized') {
      const { candidates } = await this.client.candidates(run.run_id);
      renderCandidateGallery(this.gallery, this.client, run, candidates, {
        onUpdated: this.onUpdated,
        onConflict: this.onConflict,
      });
    }
  }

  /** Render the DS1-8 grid for the scene of the currently open run. */
  async showScenarioGrid(): Promise<void> {
    const run = this.run;
    if (!run) return;
    const runs = await this.client.listRuns();
    const finalized = new Map<number, FinalizedDesign>();
    let originalUrl: string | null = liveArtifact(run, 'scene')?.url ?? null;
    for (const other of runs) {
      if (other.scene_id !== run.scene_id || other.state !== 'Finalized' || !other.selected) continue;
      const image = other.artifacts[`candidates/${other.selected}.png`];
      if (image) {
        finalized.set(other.scenario_id, { runId: other.run_id, imageUrl: image.url });
      }
      originalUrl = originalUrl ?? liveArtifact(other, 'scene')?.url ?? null;
    }
    renderScenarioGrid(this.grid, run.scene_id, originalUrl, finalized);
  }
}

export function mount(root: HTMLElement, base = ''): App {
  return new App(root, new ApiClient(base));
}
