/** Checkpoint review panel: approve, edit (description/prompt), or reject the
 * stage payload. Stale submissions (409) surface a conflict banner with a
 * refresh prompt instead of silently retrying.
 */

import { ApiClient, ApiError } from '../api.js';
import { liveArtifact, type CheckpointStage, type RunView } from '../types.js';

export interface CheckpointCallbacks {
  onUpdated(run: RunView): void;
  onConflict?(error: ApiError): void;
}

const EDITABLE: ReadonlySet<string> = new Set(['description', 'prompt']);

function payloadText(run: RunView, stage: CheckpointStage): string {
  if (stage === 'description') return run.description?.raw_text ?? '';
  if (stage === 'prompt') return run.prompt?.text ?? '';
  return '';
}

function conflictBanner(host: HTMLElement, error: ApiError, onRefresh: () => void): void {
  const banner = document.createElement('div');
  banner.className = 'conflict-banner';
  banner.setAttribute('role', 'alert');
  const text = document.createElement('span');
  text.textContent = `Your view is stale: ${error.message}. Refresh to load the latest run state.`;
  const refresh = document.createElement('button');
  refresh.className = 'refresh-button';
  refresh.textContent = 'Refresh';
  refresh.addEventListener('click', onRefresh);
  banner.append(text, refresh);
  host.prepend(banner);
}

export function renderCheckpointPanel(
  host: HTMLElement,
  client: ApiClient,
  run: RunView,
  callbacks: CheckpointCallbacks,
): void {
  host.innerHTML = '';
  const stage = run.checkpoint;
  if (!stage || stage === 'selection') {
    return;
  }

  const panel = document.createElement('section');
  panel.className = 'checkpoint-panel';
  panel.dataset.stage = stage;

  const heading = document.createElement('h2');
  heading.textContent = `Checkpoint: ${stage}`;
  panel.appendChild(heading);

  if (stage === 'highlight') {
    const artifact = liveArtifact(run, 'highlight');
    if (artifact) {
      const img = document.createElement('img');
      img.className = 'highlight-preview';
      img.src = artifact.url;
      img.alt = 'highlight region preview';
      panel.appendChild(img);
    }
  } else {
    const payload = document.createElement('pre');
    payload.className = 'checkpoint-payload';
    payload.dataset.role = 'payload';
    payload.textContent = payloadText(run, stage);
    panel.appendChild(payload);
    if (stage === 'prompt' && run.prompt?.length_warning) {
      const warn = document.createElement('p');
      warn.className = 'length-warning';
      warn.textContent = `Prompt is ${run.prompt.word_count} words (prefer ≤ 130).`;
      panel.appendChild(warn);
    }
  }

  const submit = async (body: Parameters<ApiClient['checkpoint']>[2]): Promise<void> => {
    try {
      const updated = await client.checkpoint(run.run_id, stage, {
        ...body,
        expected_version: run.version,
      });
      callbacks.onUpdated(updated);
    } catch (error) {
      if (error instanceof ApiError && error.isConflict) {
        conflictBanner(panel, error, () => callbacks.onConflict?.(error));
        callbacks.onConflict?.(error);
        return;
      }
      throw error;
    }
  };

  const controls = document.createElement('div');
  controls.className = 'checkpoint-controls';

  const approve = document.createElement('button');
  approve.dataset.action = 'approve';
  approve.textContent = 'Approve';
  approve.addEventListener('click', () => void submit({ decision: 'approved', editor: 'planner' }));
  controls.appendChild(approve);

  if (EDITABLE.has(stage)) {
    const edit = document.createElement('button');
    edit.dataset.action = 'edit';
    edit.textContent = 'Edit';
    controls.appendChild(edit);

    const editor = document.createElement('div');
    editor.className = 'checkpoint-editor';
    editor.hidden = true;
    const textarea = document.createElement('textarea');
    textarea.dataset.role = 'editor-text';
    textarea.value = payloadText(run, stage);
    const save = document.createElement('button');
    save.dataset.action = 'save-edit';
    save.textContent = 'Save edit';
    editor.append(textarea, save);

    edit.addEventListener('click', () => {
      editor.hidden = !editor.hidden;
    });
    save.addEventListener('click', () => {
      if (stage === 'description' && run.description) {
        void submit({
          decision: 'edited',
          editor: 'planner',
          updated_description: { ...run.description, raw_text: textarea.value },
        });
      } else {
        void submit({ decision: 'edited', editor: 'planner', updated_prompt_text: textarea.value });
      }
    });
    panel.appendChild(editor);
  }

  const reject = document.createElement('button');
  reject.dataset.action = 'reject';
  reject.textContent = 'Reject (regenerate)';
  reject.addEventListener('click', () => void submit({ decision: 'rejected', editor: 'planner' }));
  controls.appendChild(reject);

  panel.appendChild(controls);
  host.appendChild(panel);
}
