/**
 * Client-side submission queue: at most one generation in flight per tab;
 * extra submissions wait their turn in FIFO order.
 */

import type { ApiClient, PollOptions } from './client.js';
import type { GenerateRequest, JobPayload } from './types.js';

interface PendingItem {
  request: GenerateRequest;
  resolve: (job: JobPayload) => void;
  reject: (error: unknown) => void;
}

export class SubmissionQueue {
  private client: ApiClient;
  private pollOptions: PollOptions;
  private pending: PendingItem[] = [];
  private busy = false;

  constructor(client: ApiClient, pollOptions: PollOptions = {}) {
    this.client = client;
    this.pollOptions = pollOptions;
  }

  get depth(): number {
    return this.pending.length + (this.busy ? 1 : 0);
  }

  submit(request: GenerateRequest): Promise<JobPayload> {
    return new Promise<JobPayload>((resolve, reject) => {
      this.pending.push({ request, resolve, reject });
      void this.drain();
    });
  }

  private async drain(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    while (this.pending.length > 0) {
      const item = this.pending.shift()!;
      try {
        const jobId = await this.client.submit(item.request);
        item.resolve(await this.client.pollJob(jobId, this.pollOptions));
      } catch (error) {
        item.reject(error);
      }
    }
    this.busy = false;
  }
}
