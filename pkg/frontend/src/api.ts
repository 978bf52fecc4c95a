/** Typed client for the bikescape HTTP API.
 *
 * The UI never mutates state except through these calls; every mutation
 * carries the run version it was rendered from so the server can reject
 * stale submissions (409).
 */

import type {
  CandidatesResponse,
  CheckpointRequest,
  CheckpointStage,
  ExpertPickRequest,
  RunView,
  Scenario,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

export class ApiClient {
  constructor(private readonly base: string = '') {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, {
      headers: { 'Content-Type': 'application/json' },
      ...init,
    });
    if (!response.ok) {
      let body: { code?: string; message?: string } = {};
      try {
        body = await response.json();
      } catch {
        // non-JSON error body; fall through to statusText
      }
      throw new ApiError(response.status, body.code ?? 'unknown', body.message ?? response.statusText);
    }
    return response.json() as Promise<T>;
  }

  getScenarios(): Promise<Scenario[]> {
    return this.request('/scenarios');
  }

  listRuns(): Promise<RunView[]> {
    return this.request('/runs');
  }

  getRun(runId: string): Promise<RunView> {
    return this.request(`/runs/${runId}`);
  }

  advance(runId: string, expectedVersion?: number): Promise<RunView> {
    return this.request(`/runs/${runId}/advance`, {
      method: 'POST',
      body: JSON.stringify({ expected_version: expectedVersion ?? null }),
    });
  }

  checkpoint(runId: string, stage: CheckpointStage, body: CheckpointRequest): Promise<RunView> {
    return this.request(`/runs/${runId}/checkpoints/${stage}`, {
      method: 'POST',
      body: JSON.stringify(body),
    });
  }

  candidates(runId: string): Promise<CandidatesResponse> {
    return this.request(`/runs/${runId}/candidates`);
  }

  expertPick(runId: string, body: ExpertPickRequest): Promise<RunView> {
    return this.request(`/runs/${runId}/expert-pick`, {
      method: 'POST',
      body: JSON.stringify(body),
    });
  }
}
