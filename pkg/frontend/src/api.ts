/** Typed client for the ehrfuse HTTP service. */

import type {
  AlignPreview,
  AlignPreviewRequest,
  CohortBody,
  CohortPreview,
  LoadRequest,
  RunRequest,
  RunStatus,
  SnapshotInfo,
} from './types';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === 'string') return body.detail;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `${res.status} ${res.statusText}`;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (status: RunStatus) => void;
}

export class ApiClient {
  private baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
  }

  setBaseUrl(url: string): void {
    this.baseUrl = url.replace(/\/+$/, '');
  }

  getBaseUrl(): string {
    return this.baseUrl;
  }

  private async request<T>(method: 'GET' | 'POST', path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  loadSnapshot(req: LoadRequest): Promise<SnapshotInfo> {
    return this.request('POST', '/snapshot/load', req);
  }

  previewCohort(body: CohortBody): Promise<CohortPreview> {
    return this.request('POST', '/cohort/preview', body);
  }

  previewAlign(req: AlignPreviewRequest): Promise<AlignPreview> {
    return this.request('POST', '/align/preview', req);
  }

  startRun(req: RunRequest): Promise<{ run_id: string; status: string }> {
    return this.request('POST', '/run', req);
  }

  runReport(runId: string): Promise<RunStatus> {
    return this.request('GET', `/run/${encodeURIComponent(runId)}/report`);
  }

  artifactUrl(runId: string, name: string): string {
    const safe = name.split('/').map(encodeURIComponent).join('/');
    return `${this.baseUrl}/run/${encodeURIComponent(runId)}/artifact/${safe}`;
  }

  /** Poll the run state machine (queued -> running -> done | error). */
  async pollRun(runId: string, options: PollOptions = {}): Promise<RunStatus> {
    const intervalMs = options.intervalMs ?? 500;
    const timeoutMs = options.timeoutMs ?? 300_000;
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const status = await this.runReport(runId);
      options.onUpdate?.(status);
      if (status.status === 'done' || status.status === 'error') return status;
      if (Date.now() >= deadline) {
        throw new ApiError(0, `run ${runId} still ${status.status} after ${timeoutMs} ms`);
      }
      await sleep(intervalMs);
    }
  }
}
