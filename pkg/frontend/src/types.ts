/** Shapes returned by the bikescape HTTP API. */

export interface ArtifactRef {
  sha256: string;
  stale: boolean;
  url: string;
}

export interface LaneDescription {
  present: boolean;
  raw_text: string;
  markings: string;
  pattern: string;
  width_estimate: string;
  relative_position: string;
  parse_warning: boolean;
}

export interface OptimizedPrompt {
  text: string;
  word_count: number;
  scenario_id: number;
  user_prompt: string;
  exemplar_set_id: string;
  length_warning: boolean;
}

export type CheckpointStage = 'description' | 'prompt' | 'highlight' | 'selection';
export type ReviseTarget = 'description' | 'prompt' | 'highlight';

export interface RunView {
  run_id: string;
  scene_id: string;
  scenario_id: number;
  state: string;
  version: number;
  round: number;
  revision: number;
  checkpoint: CheckpointStage | null;
  pending_disagreement: boolean;
  pool_ids: string[];
  advanced: string[];
  verdicts: Record<string, string>;
  agent_selection: string | null;
  selected: string | null;
  expert_pick: string | null;
  disposition: string | null;
  error: string | null;
  description: LaneDescription | null;
  prompt: OptimizedPrompt | null;
  params: Record<string, unknown>;
  artifacts: Record<string, ArtifactRef>;
}

export interface CandidateEntry {
  candidate_id: string;
  stage: string;
  advanced: boolean;
  verdict: string;
  agent_selected: boolean;
  selected: boolean;
  image_url: string | null;
  mask_url: string | null;
}

export interface CandidatesResponse {
  run_id: string;
  version: number;
  candidates: CandidateEntry[];
}

export interface BoundarySpec {
  kind: string;
  buffer_width_ft: number;
}

export interface Scenario {
  scenario_id: number;
  left: BoundarySpec;
  right: BoundarySpec;
  reference_image_id: string;
  prompt_fragment: string;
}

export interface CheckpointRequest {
  decision: 'approved' | 'edited' | 'rejected';
  editor?: string;
  updated_description?: LaneDescription;
  updated_prompt_text?: string;
  expected_version?: number;
}

export interface ExpertPickRequest {
  candidate_id: string | null;
  editor?: string;
  revise?: ReviseTarget;
  expected_version?: number;
}

/** Locate the live (non-stale) artifact whose name starts with a prefix. */
export function liveArtifact(run: RunView, prefix: string): ArtifactRef | null {
  const names = Object.keys(run.artifacts)
    .filter((name) => name.startsWith(prefix) && !run.artifacts[name].stale)
    .sort();
  return names.length ? run.artifacts[names[names.length - 1]] : null;
}
