import { ApiClient } from './api';
import { initialState } from './config';
import { Store } from './state';
import { renderWizard } from './wizard';

function boot(): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app mount point');
  const store = new Store(initialState(window.location.origin));
  const client = new ApiClient(store.get().baseUrl);
  renderWizard(root, store, client);
}

if (document.readyState === 'loading') {
  document.addEventListener('DOMContentLoaded', boot);
} else {
  boot();
}
