/**
 * Thin JSON client for the generation service. The fetch implementation is
 * injected so tests can run the full submit/poll loop against a fake server.
 */

import type { GenerateRequest, JobPayload, Meta } from './types.js';

export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(typeof detail === 'string' ? detail : JSON.stringify(detail));
    this.status = status;
    this.detail = detail;
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
}

export interface ApiClient {
  fetchMeta(): Promise<Meta>;
  submit(request: GenerateRequest): Promise<string>;
  getJob(jobId: string): Promise<JobPayload>;
  pollJob(jobId: string, options?: PollOptions): Promise<JobPayload>;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

async function parseResponse(response: Response): Promise<unknown> {
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    const detail =
      body && typeof body === 'object' && 'detail' in body
        ? (body as { detail: unknown }).detail
        : `HTTP ${response.status}`;
    throw new ApiError(response.status, detail);
  }
  return body;
}

export function createClient(baseUrl: string, fetchFn: typeof fetch = fetch): ApiClient {
  const url = (path: string) => `${baseUrl.replace(/\/$/, '')}${path}`;

  const getJob = async (jobId: string): Promise<JobPayload> => {
    const response = await fetchFn(url(`/api/jobs/${jobId}`));
    return (await parseResponse(response)) as JobPayload;
  };

  return {
    async fetchMeta() {
      const response = await fetchFn(url('/api/meta'));
      return (await parseResponse(response)) as Meta;
    },

    async submit(request: GenerateRequest) {
      const response = await fetchFn(url('/api/generate'), {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(request),
      });
      const body = (await parseResponse(response)) as { job_id: string };
      return body.job_id;
    },

    getJob,

    async pollJob(jobId: string, options: PollOptions = {}) {
      const interval = options.intervalMs ?? 250;
      const deadline = Date.now() + (options.timeoutMs ?? 120_000);
      for (;;) {
        const job = await getJob(jobId);
        if (job.status === 'done' || job.status === 'failed') return job;
        if (Date.now() >= deadline) {
          throw new ApiError(0, `job ${jobId} still ${job.status} after timeout`);
        }
        await sleep(interval);
      }
    },
  };
}
