/** Candidate gallery: every pool candidate with similarity/verdict, the
 * advanced top-3 badged, the agent's selection marked, and the expert pick
 * control. A pick that disagrees with the agent opens the revise-target
 * chooser (description / prompt / highlight).
 */

import { ApiClient, ApiError } from '../api.js';
import type { CandidateEntry, ReviseTarget, RunView } from '../types.js';

export interface GalleryCallbacks {
  onUpdated(run: RunView): void;
  onConflict?(error: ApiError): void;
}

const REVISE_TARGETS: ReviseTarget[] = ['description', 'prompt', 'highlight'];

function card(entry: CandidateEntry, run: RunView, onPick: (id: string) => void): HTMLElement {
  const el = document.createElement('article');
  el.className = 'candidate-card';
  el.dataset.candidateId = entry.candidate_id;

  if (entry.image_url) {
    const img = document.createElement('img');
    img.src = entry.image_url;
    img.alt = `candidate ${entry.candidate_id}`;
    el.appendChild(img);
  }

  const title = document.createElement('h3');
  title.textContent = entry.candidate_id;
  el.appendChild(title);

  const badges = document.createElement('div');
  badges.className = 'badges';
  if (entry.advanced) {
    const badge = document.createElement('span');
    badge.className = 'badge badge-advanced';
    badge.textContent = 'advanced';
    badges.appendChild(badge);
  }
  if (entry.agent_selected) {
    const badge = document.createElement('span');
    badge.className = 'badge badge-agent';
    badge.textContent = 'agent pick';
    badges.appendChild(badge);
  }
  if (entry.selected) {
    const badge = document.createElement('span');
    badge.className = 'badge badge-final';
    badge.textContent = 'final';
    badges.appendChild(badge);
  }
  el.appendChild(badges);

  const verdict = document.createElement('p');
  verdict.className = 'verdict';
  verdict.textContent = `verdict: ${entry.verdict}`;
  el.appendChild(verdict);

  const pick = document.createElement('button');
  pick.dataset.action = 'pick';
  pick.textContent = 'Pick as best';
  // Non-advanced candidates cannot be picked (also enforced server-side).
  pick.disabled = !entry.advanced || run.state !== 'AwaitingExpertPick';
  pick.addEventListener('click', () => onPick(entry.candidate_id));
  el.appendChild(pick);
  return el;
}

export function renderCandidateGallery(
  host: HTMLElement,
  client: ApiClient,
  run: RunView,
  candidates: CandidateEntry[],
  callbacks: GalleryCallbacks,
): void {
  host.innerHTML = '';
  const section = document.createElement('section');
  section.className = 'candidate-gallery';

  const heading = document.createElement('h2');
  heading.textContent = `Candidates (round ${run.round})`;
  section.appendChild(heading);

  if (run.disposition === 'exhausted' && !run.agent_selection) {
    const note = document.createElement('p');
    note.className = 'exhausted-note';
    note.textContent =
      'No candidate passed compliance within the round budget; pick a revision target below.';
    section.appendChild(note);
  }

  const grid = document.createElement('div');
  grid.className = 'candidate-grid';
  section.appendChild(grid);

  const chooser = document.createElement('div');
  chooser.className = 'revise-chooser';
  chooser.hidden = true;
  section.appendChild(chooser);

  const submitPick = async (candidateId: string, revise?: ReviseTarget): Promise<void> => {
    try {
      const updated = await client.expertPick(run.run_id, {
        candidate_id: candidateId,
        editor: 'planner',
        revise,
        expected_version: run.version,
      });
      callbacks.onUpdated(updated);
    } catch (error) {
      if (error instanceof ApiError && error.isConflict) {
        callbacks.onConflict?.(error);
        return;
      }
      throw error;
    }
  };

  const openReviseChooser = (candidateId: string): void => {
    chooser.hidden = false;
    chooser.innerHTML = '';
    const label = document.createElement('p');
    label.textContent =
      `Your pick (${candidateId}) disagrees with the agent selection; choose which stage to revise:`;
    chooser.appendChild(label);
    const select = document.createElement('select');
    select.dataset.role = 'revise-target';
    for (const target of REVISE_TARGETS) {
      const option = document.createElement('option');
      option.value = target;
      option.textContent = target;
      select.appendChild(option);
    }
    const confirm = document.createElement('button');
    confirm.dataset.action = 'confirm-revise';
    confirm.textContent = 'Send back for revision';
    confirm.addEventListener('click', () => {
      void submitPick(candidateId, select.value as ReviseTarget);
    });
    chooser.append(select, confirm);
  };

  const onPick = (candidateId: string): void => {
    if (run.agent_selection && candidateId === run.agent_selection) {
      void submitPick(candidateId);
    } else {
      openReviseChooser(candidateId);
    }
  };

  for (const entry of candidates) {
    grid.appendChild(card(entry, run, onPick));
  }

  host.appendChild(section);
}
