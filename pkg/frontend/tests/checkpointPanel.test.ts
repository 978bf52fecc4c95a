// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { renderCheckpointPanel } from '../src/components/checkpointPanel.js';
import type { RunView } from '../src/types.js';
import { MockApi, install, makeRun } from './mockServer.js';

const flush = async (): Promise<void> => {
  await new Promise((resolve) => setTimeout(resolve, 0));
  await new Promise((resolve) => setTimeout(resolve, 0));
};

function setup(run: RunView) {
  const mock = new MockApi([run]);
  install(mock);
  const client = new ApiClient('');
  const host = document.createElement('div');
  document.body.replaceChildren(host);
  const updates: RunView[] = [];
  const conflicts: ApiError[] = [];
  renderCheckpointPanel(host, client, run, {
    onUpdated: (updated) => updates.push(updated),
    onConflict: (error) => conflicts.push(error),
  });
  return { mock, client, host, updates, conflicts };
}

describe('checkpoint panel', () => {
  beforeEach(() => {
    document.body.innerHTML = '';
  });

  it('shows the description payload and approves it', async () => {
    const run = makeRun({ state: 'Located', checkpoint: 'description' });
    const { mock, host, updates } = setup(run);

    const payload = host.querySelector('[data-role="payload"]');
    expect(payload?.textContent).toContain('right side');

    (host.querySelector('[data-action="approve"]') as HTMLButtonElement).click();
    await flush();

    const posted = mock.requests.find((r) => r.method === 'POST');
    expect(posted?.path).toBe(`/runs/${run.run_id}/checkpoints/description`);
    expect(posted?.body.decision).toBe('approved');
    expect(posted?.body.expected_version).toBe(2);
    expect(updates[0]?.state).toBe('DescriptionApproved');
  });

  it('edits the description text before approving', async () => {
    const run = makeRun({ state: 'Located', checkpoint: 'description' });
    const { mock, host, updates } = setup(run);

    (host.querySelector('[data-action="edit"]') as HTMLButtonElement).click();
    const textarea = host.querySelector('[data-role="editor-text"]') as HTMLTextAreaElement;
    expect(textarea.closest('.checkpoint-editor')?.hasAttribute('hidden')).toBe(false);
    textarea.value = 'hand-corrected lane description';
    (host.querySelector('[data-action="save-edit"]') as HTMLButtonElement).click();
    await flush();

    const posted = mock.requests.find((r) => r.method === 'POST');
    expect(posted?.body.decision).toBe('edited');
    const updated = posted?.body.updated_description as { raw_text: string };
    expect(updated.raw_text).toBe('hand-corrected lane description');
    expect(updates[0]?.state).toBe('DescriptionApproved');
    expect(updates[0]?.description?.raw_text).toBe('hand-corrected lane description');
  });

  it('rejects the description back to regeneration', async () => {
    const run = makeRun({ state: 'Located', checkpoint: 'description' });
    const { host, updates } = setup(run);

    (host.querySelector('[data-action="reject"]') as HTMLButtonElement).click();
    await flush();

    expect(updates[0]?.state).toBe('Created');
  });

  it('edits the optimized prompt at the prompt checkpoint', async () => {
    const run = makeRun({ state: 'PromptOptimized', checkpoint: 'prompt' });
    const { mock, host, updates } = setup(run);

    expect(host.querySelector('[data-role="payload"]')?.textContent).toContain('6 feet wide');
    (host.querySelector('[data-action="edit"]') as HTMLButtonElement).click();
    const textarea = host.querySelector('[data-role="editor-text"]') as HTMLTextAreaElement;
    textarea.value = 'tightened prompt text';
    (host.querySelector('[data-action="save-edit"]') as HTMLButtonElement).click();
    await flush();

    const posted = mock.requests.find((r) => r.method === 'POST');
    expect(posted?.body.updated_prompt_text).toBe('tightened prompt text');
    expect(updates[0]?.state).toBe('PromptApproved');
  });

  it('offers approve/reject but no edit for the highlight stage', () => {
    const run = makeRun({ state: 'Highlighted', checkpoint: 'highlight' });
    const { host } = setup(run);

    expect(host.querySelector('[data-action="approve"]')).toBeTruthy();
    expect(host.querySelector('[data-action="reject"]')).toBeTruthy();
    expect(host.querySelector('[data-action="edit"]')).toBeNull();
    const img = host.querySelector('img.highlight-preview') as HTMLImageElement;
    expect(img.src).toContain('/artifacts/');
  });

  it('rejecting the highlight returns the run to highlight regeneration', async () => {
    const run = makeRun({ state: 'Highlighted', checkpoint: 'highlight' });
    const { host, updates } = setup(run);

    (host.querySelector('[data-action="reject"]') as HTMLButtonElement).click();
    await flush();
    expect(updates[0]?.state).toBe('PromptApproved');
  });

  it('surfaces a stale-version conflict with a refresh prompt', async () => {
    const run = makeRun({ state: 'Located', checkpoint: 'description' });
    const { mock, host, updates, conflicts } = setup(run);
    mock.force409Once = true;

    (host.querySelector('[data-action="approve"]') as HTMLButtonElement).click();
    await flush();

    expect(updates).toHaveLength(0);
    expect(conflicts).toHaveLength(1);
    expect(conflicts[0].isConflict).toBe(true);
    const banner = host.querySelector('.conflict-banner');
    expect(banner?.textContent).toContain('stale');
    expect(banner?.querySelector('button.refresh-button')).toBeTruthy();
  });
});
