/** Shared types mirroring the generation service's JSON API. */

/** One annotation box in image pixel space, inclusive integer corners. */
export interface BoxSpec {
  class: number;
  i_min: number;
  j_min: number;
  i_max: number;
  j_max: number;
}

export interface GenerateRequest {
  height: number;
  width: number;
  boxes: BoxSpec[];
  seed: number;
  steps?: number;
}

export type JobStatus = 'queued' | 'running' | 'done' | 'failed';

export interface JobResult {
  image_png_base64: string;
  mask_png_base64: string;
  palette: number[][];
  sae: number | null;
  ebr: number | null;
  steps_used: number;
}

export interface JobPayload {
  job_id: string;
  status: JobStatus;
  request: GenerateRequest;
  result: JobResult | null;
  error: string | null;
  submitted_at: number;
  started_at: number | null;
  finished_at: number | null;
}

export interface CheckpointInfo {
  path: string;
  schedule_steps: number;
  trained_epochs: number | null;
  trained_height: number | null;
  trained_width: number | null;
}

export interface Meta {
  num_classes: number;
  class_names: string[];
  bit_width: number;
  palette: number[][];
  max_height: number;
  max_width: number;
  max_steps: number;
  queue_depth: number;
  checkpoint: CheckpointInfo;
  service_version: string;
}
