/** Payload shapes for the ehrfuse HTTP API. */

export const MODALITIES = ['ds', 'rr', 'cxr', 'ecg', 'waveform', 'echo'] as const;
export type Modality = (typeof MODALITIES)[number];

export const CXR_VIEWS = ['PA', 'AP', 'LATERAL'] as const;
export type CxrView = (typeof CXR_VIEWS)[number];

export const GRANULARITIES = ['stay', 'day', 'hour'] as const;
export type Granularity = (typeof GRANULARITIES)[number];

export const IMPUTATION_POLICIES = ['none', 'forward_fill', 'mean', 'median'] as const;
export type ImputationPolicy = (typeof IMPUTATION_POLICIES)[number];

export type IcdVersion = '9' | '10' | 'both';
export type NoteTypeFilter = 'DS' | 'RR' | 'both';
export type MatchOn = 'code' | 'name';

export interface LoadRequest {
  root: string;
  version_tag: string;
  max_reject_fraction?: number;
}

export interface SnapshotInfo {
  version_tag: string;
  tables: Record<string, number>;
  subjects: number;
  rejects: number;
}

export interface CohortBody {
  mode: 'icd' | 'all_subjects';
  icd_version: IcdVersion;
  code_patterns: string[];
  disease_name_substrings: string[];
  match_on: MatchOn;
}

export interface CohortPreview {
  member_count: number;
  subject_count: number;
  matched_codes: string[];
  coverage: Record<string, number>;
}

export interface AlignPreviewRequest {
  cohort: CohortBody;
  granularity: Granularity;
  percentile_k: number;
  modalities: string[];
  view_filter: string[];
  note_type_filter: NoteTypeFilter;
}

export interface AlignPreview {
  widths: Record<string, number>;
  cutoffs: Record<string, number>;
  bin_count: number;
  dropped_rows: number;
  sparsity: number;
}

export interface RunRequest {
  cohort: CohortBody;
  granularity: Granularity;
  percentile_k: number;
  drop_over_threshold: boolean;
  imputation: Record<string, string>;
  modalities: string[];
  view_filter: string[];
  note_type_filter: NoteTypeFilter;
  embed: boolean;
  study_export: boolean;
  write_figures: boolean;
}

export interface RunReport {
  status: string;
  out_dir: string;
  rows: number;
  columns: number;
  member_count: number;
  section_count: number;
  anchored_records: number;
  unanchored_records: number;
  reject_count: number;
  dropped_rows: number;
  truncated_rows: number;
  embed_errors: number;
  stage_seconds: Record<string, number>;
  artifact_hashes: Record<string, string>;
  figures: string[];
  error: string;
}

export type RunPhase = 'queued' | 'running' | 'done' | 'error';

export interface RunStatus {
  run_id: string;
  status: RunPhase;
  report?: RunReport;
  stage?: string;
  error?: string;
}
