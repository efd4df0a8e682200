import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { ApiClient, ApiError } from '../src/api';
import type { RunStatus } from '../src/types';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

const fetchMock = vi.fn();

beforeEach(() => {
  fetchMock.mockReset();
  vi.stubGlobal('fetch', fetchMock);
});

afterEach(() => {
  vi.unstubAllGlobals();
  vi.useRealTimers();
});

describe('ApiClient requests', () => {
  it('posts JSON bodies to the right paths', async () => {
    fetchMock.mockResolvedValueOnce(
      jsonResponse({ version_tag: 'v1', tables: { patients: 8 }, subjects: 8, rejects: 0 }),
    );
    const client = new ApiClient('http://api.test');
    const info = await client.loadSnapshot({ root: '/data', version_tag: 'v1' });
    expect(info.subjects).toBe(8);

    expect(fetchMock).toHaveBeenCalledTimes(1);
    const [url, init] = fetchMock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe('http://api.test/snapshot/load');
    expect(init.method).toBe('POST');
    expect(init.headers).toEqual({ 'Content-Type': 'application/json' });
    expect(JSON.parse(init.body as string)).toEqual({ root: '/data', version_tag: 'v1' });
  });

  it('issues GET without a body or content type', async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse({ run_id: 'r1', status: 'queued' }));
    const client = new ApiClient('http://api.test');
    await client.runReport('r1');

    const [url, init] = fetchMock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe('http://api.test/run/r1/report');
    expect(init.method).toBe('GET');
    expect(init.headers).toBeUndefined();
    expect(init.body).toBeUndefined();
  });

  it('strips trailing slashes from the base URL', async () => {
    fetchMock.mockResolvedValue(jsonResponse({}));
    const client = new ApiClient('http://api.test///');
    expect(client.getBaseUrl()).toBe('http://api.test');
    await client.previewCohort({
      mode: 'all_subjects',
      icd_version: 'both',
      code_patterns: [],
      disease_name_substrings: [],
      match_on: 'code',
    });
    expect(fetchMock.mock.calls[0][0]).toBe('http://api.test/cohort/preview');
  });

  it('surfaces the service detail message on errors', async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse({ detail: 'no snapshot loaded' }, 400));
    const client = new ApiClient('http://api.test');
    const err = await client.runReport('r9').catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).message).toBe('no snapshot loaded');
  });

  it('falls back to the status line for non-JSON error bodies', async () => {
    fetchMock.mockResolvedValueOnce(
      new Response('<html>boom</html>', { status: 500, statusText: 'Internal Server Error' }),
    );
    const client = new ApiClient('http://api.test');
    const err = await client.runReport('r9').catch((e: unknown) => e);
    expect((err as ApiError).message).toBe('500 Internal Server Error');
  });
});

describe('artifactUrl', () => {
  it('encodes path segments but keeps separators', () => {
    const client = new ApiClient('http://api.test/');
    expect(client.artifactUrl('r1', 'figures/bin counts.png')).toBe(
      'http://api.test/run/r1/artifact/figures/bin%20counts.png',
    );
    expect(client.artifactUrl('r 2', 'report.json')).toBe(
      'http://api.test/run/r%202/artifact/report.json',
    );
  });
});

describe('pollRun', () => {
  function statusResponse(status: RunStatus['status']): Response {
    return jsonResponse({ run_id: 'r1', status });
  }

  it('keeps polling until the run finishes and reports each phase', async () => {
    vi.useFakeTimers();
    fetchMock
      .mockResolvedValueOnce(statusResponse('queued'))
      .mockResolvedValueOnce(statusResponse('running'))
      .mockResolvedValueOnce(statusResponse('done'));

    const phases: string[] = [];
    const client = new ApiClient('http://api.test');
    const promise = client.pollRun('r1', {
      intervalMs: 500,
      onUpdate: (s) => phases.push(s.status),
    });

    await vi.advanceTimersByTimeAsync(0);
    expect(phases).toEqual(['queued']);
    await vi.advanceTimersByTimeAsync(500);
    expect(phases).toEqual(['queued', 'running']);
    await vi.advanceTimersByTimeAsync(500);

    const final = await promise;
    expect(final.status).toBe('done');
    expect(phases).toEqual(['queued', 'running', 'done']);
    expect(fetchMock).toHaveBeenCalledTimes(3);
  });

  it('returns immediately on an error phase', async () => {
    fetchMock.mockResolvedValueOnce(
      jsonResponse({ run_id: 'r1', status: 'error', error: 'stage failed' }),
    );
    const client = new ApiClient('http://api.test');
    const final = await client.pollRun('r1');
    expect(final.status).toBe('error');
    expect(final.error).toBe('stage failed');
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });

  it('gives up after the timeout', async () => {
    vi.useFakeTimers();
    fetchMock.mockImplementation(() => Promise.resolve(statusResponse('running')));

    const client = new ApiClient('http://api.test');
    const promise = client.pollRun('r1', { intervalMs: 500, timeoutMs: 1000 });
    const settled = promise.catch((e: unknown) => e);

    await vi.advanceTimersByTimeAsync(2000);
    const err = await settled;
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).message).toMatch(/still running/);
  });
});
