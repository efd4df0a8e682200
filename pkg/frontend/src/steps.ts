/** The six wizard steps. Each render function owns its panel: it wires
 * inputs to the store and repaints only its preview/status region, so
 * typing never loses focus to a full re-render. */

import { ApiClient, ApiError } from './api';
import {
  DEBOUNCE_MS,
  WizardState,
  buildAlignPreviewRequest,
  buildCohortBody,
  buildRunRequest,
  parseImputation,
  stepBlocker,
} from './config';
import { Store, debounce } from './state';
import { CXR_VIEWS, GRANULARITIES, MODALITIES } from './types';
import type { RunStatus } from './types';

export interface StepContext {
  store: Store<WizardState>;
  client: ApiClient;
}

export interface StepDef {
  title: string;
  render(el: HTMLElement, ctx: StepContext): void;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function errorMessage(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return err.message;
  return String(err);
}

function countTable(rows: Array<[string, string]>): string {
  return `<table class="kv">${rows
    .map(([k, v]) => `<tr><td>${escapeHtml(k)}</td><td>${escapeHtml(v)}</td></tr>`)
    .join('')}</table>`;
}

// ------------------------------------------------------------------ step 1

function renderDatasetStep(el: HTMLElement, { store, client }: StepContext): void {
  const s = store.get();
  el.innerHTML = `
    <p class="hint">Point the wizard at a running <code>ehrfuse serve</code>
    instance, then load a corpus directory visible to that server.</p>
    <label>API base URL <input id="base-url" type="text" value="${escapeHtml(s.baseUrl)}"></label>
    <label>Dataset root <input id="ds-root" type="text" placeholder="/path/to/corpus" value="${escapeHtml(s.root)}"></label>
    <label>Version tag <input id="ds-version" type="text" value="${escapeHtml(s.versionTag)}"></label>
    <button id="load-btn" type="button">Load snapshot</button>
    <div id="load-status" class="preview"></div>`;

  const status = el.querySelector('#load-status') as HTMLElement;
  const paint = () => {
    const st = store.get();
    if (st.loadError) {
      status.innerHTML = `<p class="error">${escapeHtml(st.loadError)}</p>`;
    } else if (st.snapshot) {
      const rows: Array<[string, string]> = [
        ['version', st.snapshot.version_tag],
        ['subjects', String(st.snapshot.subjects)],
        ['rejected rows', String(st.snapshot.rejects)],
        ...Object.entries(st.snapshot.tables).map(
          ([name, n]): [string, string] => [`rows in ${name}`, String(n)],
        ),
      ];
      status.innerHTML = countTable(rows);
    } else {
      status.innerHTML = '';
    }
  };
  paint();

  const baseInput = el.querySelector('#base-url') as HTMLInputElement;
  const rootInput = el.querySelector('#ds-root') as HTMLInputElement;
  const versionInput = el.querySelector('#ds-version') as HTMLInputElement;
  baseInput.addEventListener('input', () => store.set({ baseUrl: baseInput.value }));
  rootInput.addEventListener('input', () => store.set({ root: rootInput.value }));
  versionInput.addEventListener('input', () => store.set({ versionTag: versionInput.value }));

  (el.querySelector('#load-btn') as HTMLButtonElement).addEventListener('click', async () => {
    const st = store.get();
    client.setBaseUrl(st.baseUrl);
    status.innerHTML = '<p class="muted">loading…</p>';
    try {
      const snapshot = await client.loadSnapshot({
        root: st.root,
        version_tag: st.versionTag,
      });
      store.set({ snapshot, loadError: '', cohortPreview: null, alignPreview: null });
    } catch (err) {
      store.set({ snapshot: null, loadError: errorMessage(err) });
    }
    paint();
  });
}

// ------------------------------------------------------------------ step 2

function renderCohortStep(el: HTMLElement, { store, client }: StepContext): void {
  const s = store.get();
  el.innerHTML = `
    <div class="row">
      <label><input type="radio" name="mode" value="icd" ${s.mode === 'icd' ? 'checked' : ''}> ICD query</label>
      <label><input type="radio" name="mode" value="all_subjects" ${s.mode === 'all_subjects' ? 'checked' : ''}> every admission</label>
    </div>
    <div id="icd-controls" ${s.mode === 'icd' ? '' : 'hidden'}>
      <div class="row">
        <label><input type="radio" name="match-on" value="code" ${s.matchOn === 'code' ? 'checked' : ''}> by code</label>
        <label><input type="radio" name="match-on" value="name" ${s.matchOn === 'name' ? 'checked' : ''}> by disease title</label>
        <label>ICD version
          <select id="icd-version">
            ${(['both', '9', '10'] as const)
              .map((v) => `<option value="${v}" ${s.icdVersion === v ? 'selected' : ''}>${v}</option>`)
              .join('')}
          </select>
        </label>
      </div>
      <label id="patterns-label">${s.matchOn === 'code' ? 'Code patterns (trailing * = prefix)' : 'Title substrings'}
        <textarea id="patterns" rows="3"
          placeholder="${s.matchOn === 'code' ? '038*, 99591, A41*' : 'sepsis, septic shock'}">${escapeHtml(s.patternsText)}</textarea>
      </label>
    </div>
    <div id="cohort-preview" class="preview"></div>`;

  const previewEl = el.querySelector('#cohort-preview') as HTMLElement;
  const paint = () => {
    const st = store.get();
    if (st.cohortError) {
      previewEl.innerHTML = `<p class="error">${escapeHtml(st.cohortError)}</p>`;
      return;
    }
    const p = st.cohortPreview;
    if (!p) {
      previewEl.innerHTML = '<p class="muted">waiting for a preview…</p>';
      return;
    }
    const codes = p.matched_codes.slice(0, 12).join(', ') +
      (p.matched_codes.length > 12 ? ` … (${p.matched_codes.length} total)` : '');
    previewEl.innerHTML =
      `<p><strong id="member-count">${p.member_count}</strong> member admissions, ` +
      `${p.subject_count} subjects</p>` +
      (codes ? `<p>matched codes: ${escapeHtml(codes)}</p>` : '') +
      countTable(
        Object.entries(p.coverage).map(([m, c]): [string, string] => [
          `${m} coverage`,
          `${(c * 100).toFixed(1)}%`,
        ]),
      );
  };
  paint();

  let seq = 0;
  const refresh = debounce(async () => {
    const st = store.get();
    const blocked = stepBlocker(st, 1);
    if (st.mode === 'icd' && blocked && !st.cohortError) {
      store.set({ cohortPreview: null, cohortError: blocked });
      paint();
      return;
    }
    const mine = ++seq;
    try {
      const preview = await client.previewCohort(buildCohortBody(st));
      if (mine !== seq) return; // a newer edit superseded this response
      store.set({ cohortPreview: preview, cohortError: '' });
    } catch (err) {
      if (mine !== seq) return;
      store.set({ cohortPreview: null, cohortError: errorMessage(err) });
    }
    paint();
  }, DEBOUNCE_MS);

  const icdControls = el.querySelector('#icd-controls') as HTMLElement;
  for (const radio of el.querySelectorAll<HTMLInputElement>('input[name="mode"]')) {
    radio.addEventListener('change', () => {
      store.set({ mode: radio.value as WizardState['mode'], cohortError: '' });
      icdControls.hidden = radio.value !== 'icd';
      refresh();
    });
  }
  const patternsLabel = el.querySelector('#patterns-label') as HTMLElement;
  for (const radio of el.querySelectorAll<HTMLInputElement>('input[name="match-on"]')) {
    radio.addEventListener('change', () => {
      store.set({ matchOn: radio.value as WizardState['matchOn'], cohortError: '' });
      patternsLabel.firstChild!.textContent =
        radio.value === 'code' ? 'Code patterns (trailing * = prefix)' : 'Title substrings';
      refresh();
    });
  }
  const versionSelect = el.querySelector('#icd-version') as HTMLSelectElement;
  versionSelect.addEventListener('change', () => {
    store.set({ icdVersion: versionSelect.value as WizardState['icdVersion'] });
    refresh();
  });
  const patterns = el.querySelector('#patterns') as HTMLTextAreaElement;
  patterns.addEventListener('input', () => {
    store.set({ patternsText: patterns.value, cohortError: '' });
    refresh();
  });

  refresh();
}

// ------------------------------------------------------------------ step 3

function renderModalityStep(el: HTMLElement, { store }: StepContext): void {
  const s = store.get();
  el.innerHTML = `
    <fieldset>
      <legend>Modalities</legend>
      ${MODALITIES.map(
        (m) => `<label class="inline"><input type="checkbox" name="modality" value="${m}"
          ${s.modalities.includes(m) ? 'checked' : ''}> ${m}</label>`,
      ).join('')}
    </fieldset>
    <label>Note types
      <select id="note-type">
        ${(['both', 'DS', 'RR'] as const)
          .map((v) => `<option value="${v}" ${s.noteTypeFilter === v ? 'selected' : ''}>${v}</option>`)
          .join('')}
      </select>
    </label>
    <fieldset id="view-filter" ${s.modalities.includes('cxr') ? '' : 'hidden'}>
      <legend>CXR views (none checked = all)</legend>
      ${CXR_VIEWS.map(
        (v) => `<label class="inline"><input type="checkbox" name="view" value="${v}"
          ${s.viewFilter.includes(v) ? 'checked' : ''}> ${v}</label>`,
      ).join('')}
    </fieldset>`;

  const viewFieldset = el.querySelector('#view-filter') as HTMLElement;
  for (const box of el.querySelectorAll<HTMLInputElement>('input[name="modality"]')) {
    box.addEventListener('change', () => {
      const current = new Set(store.get().modalities);
      if (box.checked) current.add(box.value);
      else current.delete(box.value);
      const modalities = MODALITIES.filter((m) => current.has(m));
      store.set({ modalities, alignPreview: null });
      viewFieldset.hidden = !current.has('cxr');
    });
  }
  const noteType = el.querySelector('#note-type') as HTMLSelectElement;
  noteType.addEventListener('change', () => {
    store.set({ noteTypeFilter: noteType.value as WizardState['noteTypeFilter'], alignPreview: null });
  });
  for (const box of el.querySelectorAll<HTMLInputElement>('input[name="view"]')) {
    box.addEventListener('change', () => {
      const current = new Set(store.get().viewFilter);
      if (box.checked) current.add(box.value);
      else current.delete(box.value);
      store.set({ viewFilter: CXR_VIEWS.filter((v) => current.has(v)), alignPreview: null });
    });
  }
}

// ------------------------------------------------------------------ step 4

function renderAlignStep(el: HTMLElement, { store, client }: StepContext): void {
  const s = store.get();
  el.innerHTML = `
    <div class="row">
      ${GRANULARITIES.map(
        (g) => `<label><input type="radio" name="granularity" value="${g}"
          ${s.granularity === g ? 'checked' : ''}> ${g}</label>`,
      ).join('')}
    </div>
    <label>Slot width percentile k = <strong id="k-value">${s.percentileK}</strong>
      <input id="k-slider" type="range" min="1" max="100" step="1" value="${s.percentileK}">
    </label>
    <div class="row">
      <label><input type="radio" name="overflow" value="drop" ${s.dropOverThreshold ? 'checked' : ''}>
        drop bins over the cutoff</label>
      <label><input type="radio" name="overflow" value="truncate" ${s.dropOverThreshold ? '' : 'checked'}>
        keep them, truncated</label>
    </div>
    <label>Lab imputation, one <code>itemid policy</code> per line
      (policies: none, forward_fill, mean, median)
      <textarea id="imputation" rows="3" placeholder="50912 forward_fill">${escapeHtml(s.imputationText)}</textarea>
    </label>
    <div id="align-preview" class="preview"></div>`;

  const previewEl = el.querySelector('#align-preview') as HTMLElement;
  const paint = () => {
    const st = store.get();
    if (st.alignError) {
      previewEl.innerHTML = `<p class="error">${escapeHtml(st.alignError)}</p>`;
      return;
    }
    const p = st.alignPreview;
    if (!p) {
      previewEl.innerHTML = '<p class="muted">waiting for a preview…</p>';
      return;
    }
    const widths = Object.entries(p.widths);
    previewEl.innerHTML =
      countTable([
        ['bins', String(p.bin_count)],
        ['bins dropped at this k', String(p.dropped_rows)],
        ['slot sparsity', `${(p.sparsity * 100).toFixed(1)}%`],
      ]) +
      (widths.length
        ? `<p>slot widths: ${widths.map(([m, w]) => `${m}=${w}`).join(', ')}</p>`
        : '<p class="muted">no occupied slots for this cohort</p>');
  };
  paint();

  let seq = 0;
  const refresh = debounce(async () => {
    const st = store.get();
    const mine = ++seq;
    try {
      const preview = await client.previewAlign(buildAlignPreviewRequest(st));
      if (mine !== seq) return;
      store.set({ alignPreview: preview, alignError: '' });
    } catch (err) {
      if (mine !== seq) return;
      store.set({ alignPreview: null, alignError: errorMessage(err) });
    }
    paint();
  }, DEBOUNCE_MS);

  for (const radio of el.querySelectorAll<HTMLInputElement>('input[name="granularity"]')) {
    radio.addEventListener('change', () => {
      store.set({ granularity: radio.value as WizardState['granularity'] });
      refresh();
    });
  }
  const slider = el.querySelector('#k-slider') as HTMLInputElement;
  const kValue = el.querySelector('#k-value') as HTMLElement;
  slider.addEventListener('input', () => {
    kValue.textContent = slider.value;
    store.set({ percentileK: Number(slider.value) });
    refresh();
  });
  for (const radio of el.querySelectorAll<HTMLInputElement>('input[name="overflow"]')) {
    radio.addEventListener('change', () =>
      store.set({ dropOverThreshold: radio.value === 'drop' }),
    );
  }
  const imputation = el.querySelector('#imputation') as HTMLTextAreaElement;
  imputation.addEventListener('input', () => {
    store.set({ imputationText: imputation.value });
    const { error } = parseImputation(imputation.value);
    if (error) {
      store.set({ alignError: error });
      paint();
    } else if (store.get().alignError) {
      store.set({ alignError: '' });
      refresh();
    }
  });

  refresh();
}

// ------------------------------------------------------------------ step 5

function renderEmbedStep(el: HTMLElement, { store }: StepContext): void {
  const s = store.get();
  el.innerHTML = `
    <p class="hint">The builtin encoder hashes tokens into a 768-dim signed
    bucket vector per 512-token chunk and mean-pools the chunks. External
    encoders are available through the run-config JSON on the command line.</p>
    <label class="inline"><input id="embed" type="checkbox" ${s.embed ? 'checked' : ''}>
      attach embedding columns (builtin encoder)</label>
    <label class="inline"><input id="study-export" type="checkbox"
      ${s.studyExport ? 'checked' : ''} ${s.embed ? '' : 'disabled'}>
      also write study-level embeddings</label>
    <label class="inline"><input id="figures" type="checkbox" ${s.writeFigures ? 'checked' : ''}>
      render run figures</label>`;

  const embedBox = el.querySelector('#embed') as HTMLInputElement;
  const studyBox = el.querySelector('#study-export') as HTMLInputElement;
  const figuresBox = el.querySelector('#figures') as HTMLInputElement;
  embedBox.addEventListener('change', () => {
    studyBox.disabled = !embedBox.checked;
    if (!embedBox.checked) {
      studyBox.checked = false;
      store.set({ embed: false, studyExport: false });
    } else {
      store.set({ embed: true });
    }
  });
  studyBox.addEventListener('change', () => store.set({ studyExport: studyBox.checked }));
  figuresBox.addEventListener('change', () => store.set({ writeFigures: figuresBox.checked }));
}

// ------------------------------------------------------------------ step 6

function renderRunStep(el: HTMLElement, { store, client }: StepContext): void {
  const request = buildRunRequest(store.get());
  el.innerHTML = `
    <details open>
      <summary>Run request</summary>
      <pre id="run-request">${escapeHtml(JSON.stringify(request, null, 2))}</pre>
    </details>
    <button id="launch-btn" type="button">Launch run</button>
    <div id="run-status" class="preview"></div>`;

  const statusEl = el.querySelector('#run-status') as HTMLElement;
  const launchBtn = el.querySelector('#launch-btn') as HTMLButtonElement;

  const paint = () => {
    const st = store.get();
    if (st.runPhase === '') {
      statusEl.innerHTML = '';
      return;
    }
    if (st.runPhase === 'queued' || st.runPhase === 'running') {
      statusEl.innerHTML = `<p class="muted">run ${escapeHtml(st.runId)} is ${st.runPhase}…</p>`;
      return;
    }
    if (st.runPhase === 'error') {
      statusEl.innerHTML = `<p class="error">run failed` +
        (st.runStage ? ` in stage ${escapeHtml(st.runStage)}` : '') +
        `: ${escapeHtml(st.runError)}</p>`;
      return;
    }
    const report = st.report!;
    const artifacts = [...Object.keys(report.artifact_hashes), 'report.json'];
    statusEl.innerHTML =
      countTable([
        ['rows', String(report.rows)],
        ['columns', String(report.columns)],
        ['member admissions', String(report.member_count)],
        ['note sections', String(report.section_count)],
        ['anchored records', String(report.anchored_records)],
        ['dropped bins', String(report.dropped_rows)],
        ['truncated bins', String(report.truncated_rows)],
        ['embed errors', String(report.embed_errors)],
        ['total seconds', Object.values(report.stage_seconds)
          .reduce((a, b) => a + b, 0).toFixed(2)],
      ]) +
      `<h4>Artifacts</h4><ul class="artifacts">` +
      artifacts
        .map(
          (name) =>
            `<li><a href="${client.artifactUrl(st.runId, name)}" download>${escapeHtml(name)}</a></li>`,
        )
        .join('') +
      `</ul>`;
  };
  paint();

  launchBtn.addEventListener('click', async () => {
    launchBtn.disabled = true;
    store.set({ runPhase: 'queued', runError: '', runStage: '', report: null });
    paint();
    try {
      const { run_id } = await client.startRun(buildRunRequest(store.get()));
      store.set({ runId: run_id });
      const final: RunStatus = await client.pollRun(run_id, {
        onUpdate: (status) => {
          if (status.status === 'queued' || status.status === 'running') {
            store.set({ runPhase: status.status });
            paint();
          }
        },
      });
      if (final.status === 'done') {
        store.set({ runPhase: 'done', report: final.report ?? null });
      } else {
        store.set({
          runPhase: 'error',
          runStage: final.stage ?? '',
          runError: final.error ?? 'unknown failure',
        });
      }
    } catch (err) {
      store.set({ runPhase: 'error', runError: errorMessage(err) });
    }
    launchBtn.disabled = false;
    paint();
  });
}

export const STEPS: StepDef[] = [
  { title: 'Dataset', render: renderDatasetStep },
  { title: 'Cohort', render: renderCohortStep },
  { title: 'Modalities', render: renderModalityStep },
  { title: 'Alignment', render: renderAlignStep },
  { title: 'Embeddings', render: renderEmbedStep },
  { title: 'Run', render: renderRunStep },
];
