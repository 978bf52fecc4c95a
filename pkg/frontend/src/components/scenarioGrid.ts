/** Comparative view of one scene across the eight catalog scenarios:
 * the original capture plus one tile per finalized design (DS1-DS8),
 * with placeholders where a scenario has no finalized run yet.
 */

export interface FinalizedDesign {
  runId: string;
  imageUrl: string;
}

export function renderScenarioGrid(
  host: HTMLElement,
  sceneId: string,
  originalUrl: string | null,
  finalizedByScenario: Map<number, FinalizedDesign>,
): void {
  host.innerHTML = '';
  const section = document.createElement('section');
  section.className = 'scenario-grid';

  const heading = document.createElement('h2');
  heading.textContent = `Scene ${sceneId}: design scenarios`;
  section.appendChild(heading);

  if (finalizedByScenario.size === 0) {
    const empty = document.createElement('p');
    empty.className = 'empty-state';
    empty.textContent = 'No finalized designs for this scene yet.';
    section.appendChild(empty);
    host.appendChild(section);
    return;
  }

  const grid = document.createElement('div');
  grid.className = 'grid-row';

  const original = document.createElement('figure');
  original.className = 'tile tile-original';
  if (originalUrl) {
    const img = document.createElement('img');
    img.src = originalUrl;
    img.alt = `original scene ${sceneId}`;
    original.appendChild(img);
  }
  const originalCaption = document.createElement('figcaption');
  originalCaption.textContent = 'Original';
  original.appendChild(originalCaption);
  grid.appendChild(original);

  for (let scenarioId = 1; scenarioId <= 8; scenarioId++) {
    const design = finalizedByScenario.get(scenarioId);
    const tile = document.createElement('figure');
    tile.dataset.scenarioId = String(scenarioId);
    if (design) {
      tile.className = 'tile tile-design';
      const img = document.createElement('img');
      img.src = design.imageUrl;
      img.alt = `DS${scenarioId} design`;
      tile.appendChild(img);
      const caption = document.createElement('figcaption');
      caption.textContent = `DS${scenarioId}`;
      tile.appendChild(caption);
    } else {
      tile.className = 'tile placeholder';
      const caption = document.createElement('figcaption');
      caption.textContent = `DS${scenarioId} — pending`;
      tile.appendChild(caption);
    }
    grid.appendChild(tile);
  }

  section.appendChild(grid);
  host.appendChild(section);
}
