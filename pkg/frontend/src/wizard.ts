/** Wizard shell: step navigation, gating, and content mounting.
 *
 * The nav and footer repaint on every store change (cheap, no inputs);
 * step content re-renders only when stepIndex changes so focus and
 * in-flight edits survive preview updates. */

import { ApiClient } from './api';
import { WizardState, stepBlocker } from './config';
import { Store } from './state';
import { STEPS, StepContext, escapeHtml } from './steps';

export function renderWizard(root: HTMLElement, store: Store<WizardState>, client: ApiClient): void {
  root.innerHTML = `
    <div class="wizard">
      <nav class="wizard-nav"></nav>
      <section class="wizard-content" tabindex="0"></section>
      <footer class="wizard-footer">
        <button type="button" class="wizard-back">Back</button>
        <span class="wizard-blocker muted"></span>
        <button type="button" class="wizard-next">Next</button>
      </footer>
    </div>`;

  const nav = root.querySelector('.wizard-nav') as HTMLElement;
  const content = root.querySelector('.wizard-content') as HTMLElement;
  const backBtn = root.querySelector('.wizard-back') as HTMLButtonElement;
  const nextBtn = root.querySelector('.wizard-next') as HTMLButtonElement;
  const blockerEl = root.querySelector('.wizard-blocker') as HTMLElement;

  const ctx: StepContext = { store, client };
  let renderedStep = -1;

  function sync(): void {
    const s = store.get();

    nav.innerHTML = '';
    STEPS.forEach((step, idx) => {
      const btn = document.createElement('button');
      btn.type = 'button';
      btn.textContent = `${idx + 1}. ${step.title}`;
      const canGo = idx <= s.stepIndex;
      btn.disabled = !canGo;
      if (idx === s.stepIndex) btn.classList.add('active');
      btn.addEventListener('click', () => {
        if (canGo) store.set({ stepIndex: idx });
      });
      nav.appendChild(btn);
    });

    const blocker = stepBlocker(s, s.stepIndex);
    const last = s.stepIndex === STEPS.length - 1;
    backBtn.disabled = s.stepIndex === 0;
    nextBtn.disabled = last || blocker !== '';
    nextBtn.hidden = last;
    blockerEl.innerHTML = blocker && !last ? escapeHtml(blocker) : '';

    if (s.stepIndex !== renderedStep) {
      renderedStep = s.stepIndex;
      content.innerHTML = '';
      STEPS[s.stepIndex].render(content, ctx);
    }
  }

  backBtn.addEventListener('click', () => {
    const s = store.get();
    if (s.stepIndex > 0) store.set({ stepIndex: s.stepIndex - 1 });
  });
  nextBtn.addEventListener('click', () => {
    const s = store.get();
    if (s.stepIndex < STEPS.length - 1 && stepBlocker(s, s.stepIndex) === '') {
      store.set({ stepIndex: s.stepIndex + 1 });
    }
  });

  store.subscribe(sync);
  sync();
}
