import { ServiceClient } from './api.js';
import { SessionController } from './session.js';
import { ConsoleUI } from './ui.js';

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get('service') ?? 'http://127.0.0.1:8470';
  const checkpoint = params.get('checkpoint') ?? 'default';
  const client = new ServiceClient({ baseUrl });
  const controller = new SessionController(client, checkpoint);
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  new ConsoleUI(root, controller);
  await controller.start();
}

boot().catch((error) => {
  const root = document.getElementById('app');
  if (root) root.textContent = `failed to start: ${error}`;
});
