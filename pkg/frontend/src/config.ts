/** Wizard state, input parsing, and API request builders. */

import type {
  AlignPreview,
  AlignPreviewRequest,
  CohortBody,
  CohortPreview,
  Granularity,
  IcdVersion,
  MatchOn,
  NoteTypeFilter,
  RunReport,
  RunRequest,
  SnapshotInfo,
} from './types';
import { IMPUTATION_POLICIES, MODALITIES } from './types';

export const DEBOUNCE_MS = 300;

export interface WizardState {
  stepIndex: number;
  // dataset
  baseUrl: string;
  root: string;
  versionTag: string;
  snapshot: SnapshotInfo | null;
  loadError: string;
  // cohort
  mode: 'icd' | 'all_subjects';
  matchOn: MatchOn;
  patternsText: string;
  icdVersion: IcdVersion;
  cohortPreview: CohortPreview | null;
  cohortError: string;
  // modalities
  modalities: string[];
  noteTypeFilter: NoteTypeFilter;
  viewFilter: string[];
  // alignment
  granularity: Granularity;
  percentileK: number;
  dropOverThreshold: boolean;
  imputationText: string;
  alignPreview: AlignPreview | null;
  alignError: string;
  // embedding
  embed: boolean;
  studyExport: boolean;
  writeFigures: boolean;
  // run
  runId: string;
  runPhase: '' | 'queued' | 'running' | 'done' | 'error';
  runStage: string;
  runError: string;
  report: RunReport | null;
}

export function initialState(baseUrl: string): WizardState {
  return {
    stepIndex: 0,
    baseUrl,
    root: '',
    versionTag: 'mimic-iv-3.1',
    snapshot: null,
    loadError: '',
    mode: 'icd',
    matchOn: 'code',
    patternsText: '',
    icdVersion: 'both',
    cohortPreview: null,
    cohortError: '',
    modalities: [...MODALITIES],
    noteTypeFilter: 'both',
    viewFilter: [],
    granularity: 'day',
    percentileK: 100,
    dropOverThreshold: true,
    imputationText: '',
    alignPreview: null,
    alignError: '',
    embed: false,
    studyExport: false,
    writeFigures: true,
    runId: '',
    runPhase: '',
    runStage: '',
    runError: '',
    report: null,
  };
}

/** Code patterns: comma/whitespace separated, '*' only as the last character. */
export function parsePatterns(text: string): { patterns: string[]; error: string } {
  const seen = new Set<string>();
  const patterns: string[] = [];
  for (const raw of text.split(/[\s,]+/)) {
    const token = raw.trim();
    if (!token || seen.has(token)) continue;
    if (token.slice(0, -1).includes('*')) {
      return { patterns: [], error: `'*' is only allowed at the end: ${token}` };
    }
    if (!token.replace(/\*+$/, '')) {
      return { patterns: [], error: `empty pattern: ${token}` };
    }
    seen.add(token);
    patterns.push(token);
  }
  return { patterns, error: '' };
}

/** Disease-title substrings: one per line or comma-separated; spaces allowed. */
export function parseNames(text: string): { names: string[]; error: string } {
  const seen = new Set<string>();
  const names: string[] = [];
  for (const raw of text.split(/[,\n]+/)) {
    const token = raw.trim();
    if (!token || seen.has(token)) continue;
    seen.add(token);
    names.push(token);
  }
  return { names, error: '' };
}

/** Lines of `itemid policy` (or `itemid: policy`, `itemid=policy`). */
export function parseImputation(text: string): {
  imputation: Record<string, string>;
  error: string;
} {
  const imputation: Record<string, string> = {};
  for (const raw of text.split('\n')) {
    const line = raw.trim();
    if (!line) continue;
    const parts = line.split(/[\s:=]+/).filter(Boolean);
    if (parts.length !== 2) {
      return { imputation: {}, error: `expected "itemid policy": ${line}` };
    }
    const [item, policy] = parts;
    if (!(IMPUTATION_POLICIES as readonly string[]).includes(policy)) {
      return {
        imputation: {},
        error: `policy must be one of ${IMPUTATION_POLICIES.join(', ')}: ${line}`,
      };
    }
    imputation[item] = policy;
  }
  return { imputation, error: '' };
}

export function buildCohortBody(s: WizardState): CohortBody {
  if (s.mode === 'all_subjects') {
    return {
      mode: 'all_subjects',
      icd_version: 'both',
      code_patterns: [],
      disease_name_substrings: [],
      match_on: 'code',
    };
  }
  return {
    mode: 'icd',
    icd_version: s.icdVersion,
    code_patterns: s.matchOn === 'code' ? parsePatterns(s.patternsText).patterns : [],
    disease_name_substrings: s.matchOn === 'name' ? parseNames(s.patternsText).names : [],
    match_on: s.matchOn,
  };
}

export function buildAlignPreviewRequest(s: WizardState): AlignPreviewRequest {
  return {
    cohort: buildCohortBody(s),
    granularity: s.granularity,
    percentile_k: s.percentileK,
    modalities: [...s.modalities],
    view_filter: [...s.viewFilter],
    note_type_filter: s.noteTypeFilter,
  };
}

export function buildRunRequest(s: WizardState): RunRequest {
  return {
    cohort: buildCohortBody(s),
    granularity: s.granularity,
    percentile_k: s.percentileK,
    drop_over_threshold: s.dropOverThreshold,
    imputation: parseImputation(s.imputationText).imputation,
    modalities: [...s.modalities],
    view_filter: [...s.viewFilter],
    note_type_filter: s.noteTypeFilter,
    embed: s.embed,
    study_export: s.studyExport,
    write_figures: s.writeFigures,
  };
}

/** Why the user cannot leave the given step yet, or '' when they can. */
export function stepBlocker(s: WizardState, stepIndex: number): string {
  switch (stepIndex) {
    case 0:
      return s.snapshot ? '' : 'load a dataset first';
    case 1: {
      if (s.mode === 'all_subjects') return '';
      if (s.matchOn === 'code') {
        const { patterns, error } = parsePatterns(s.patternsText);
        if (error) return error;
        if (!patterns.length) return 'add at least one code pattern';
      } else {
        const { names } = parseNames(s.patternsText);
        if (!names.length) return 'add at least one title substring';
      }
      return s.cohortError;
    }
    case 2:
      return s.modalities.length ? '' : 'pick at least one modality';
    case 3: {
      if (!(s.percentileK > 0 && s.percentileK <= 100)) {
        return 'percentile k must be in (0, 100]';
      }
      return parseImputation(s.imputationText).error;
    }
    default:
      return '';
  }
}
