/** Session history of recent generations: newest first, capped length. */

import type { GenerateRequest, JobResult } from './types.js';

export const HISTORY_LIMIT = 20;

export interface HistoryEntry {
  jobId: string;
  request: GenerateRequest;
  result: JobResult;
  finishedAt: number;
}

/** Prepend an entry, dropping the oldest past the cap. Pure. */
export function pushEntry(
  history: HistoryEntry[],
  entry: HistoryEntry,
  limit: number = HISTORY_LIMIT,
): HistoryEntry[] {
  return [entry, ...history].slice(0, limit);
}

export function describeEntry(entry: HistoryEntry): string {
  const boxes = entry.request.boxes.length;
  const label = boxes === 1 ? 'box' : 'boxes';
  return `seed ${entry.request.seed} · ${boxes} ${label}`;
}
