/**
 * Browser shell: wires the session store to the DOM. Configuration comes
 * from query parameters: ?api=http://host:port&tree=TREE&params=PARAMS.
 */

import { ApiClient, HistoryRecord } from './api.js';
import { SessionStore, WhatIfOverlay } from './store.js';
import {
  renderAnswerLog,
  renderMasteryTree,
  renderRecommendation,
  renderStatus,
  renderWhatIf,
} from './view.js';

const params = new URLSearchParams(window.location.search);
const apiBase = params.get('api') ?? 'http://127.0.0.1:8321';
const treeId = params.get('tree') ?? 'tree';
const paramsId = params.get('params') ?? 'params';

const store = new SessionStore(new ApiClient(apiBase));
let overlay: WhatIfOverlay | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function render(): void {
  const view = store.snapshot();
  el('status').innerHTML = renderStatus(view);
  el('tree-panel').innerHTML = view.tree
    ? renderMasteryTree(view.tree, view.mastery, view.recommendation?.kc ?? null)
    : '<p class="empty">Start a session to see the concept tree.</p>';
  el('recommendation-panel').innerHTML = renderRecommendation(view);
  el('what-if-panel').innerHTML = renderWhatIf(overlay);
  el('log-panel').innerHTML = renderAnswerLog(view.answerLog);
  el('total-mastery').textContent = view.sessionId
    ? `total mastery ${view.totalMastery.toFixed(4)}`
    : '';
  const disabled = !view.sessionId || view.busy;
  (el('btn-correct') as HTMLButtonElement).disabled = disabled;
  (el('btn-incorrect') as HTMLButtonElement).disabled = disabled;
}

async function parseSeedHistory(file: File | null): Promise<HistoryRecord[] | undefined> {
  if (!file) return undefined;
  const text = await file.text();
  const records: HistoryRecord[] = [];
  for (const line of text.split('\n')) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const obj = JSON.parse(trimmed);
    records.push({
      kc: String(obj.kc),
      correct: Boolean(obj.correct),
      difficulty: obj.difficulty ?? 'medium',
    });
  }
  return records;
}

function wire(): void {
  store.subscribe(() => {
    overlay = null; // any state change invalidates the transient overlay
    render();
  });

  el('btn-start').addEventListener('click', async () => {
    const fileInput = el('seed-history') as HTMLInputElement;
    const history = await parseSeedHistory(fileInput.files?.[0] ?? null);
    void store.start(treeId, paramsId, history);
  });
  el('btn-correct').addEventListener('click', () => void store.submitAnswer(true));
  el('btn-incorrect').addEventListener('click', () => void store.submitAnswer(false));

  el('tree-panel').addEventListener('click', (event) => {
    const target = (event.target as HTMLElement).closest('li.leaf');
    if (!(target instanceof HTMLElement)) return;
    const kc = target.dataset['kc'];
    overlay = kc ? store.whatIf(kc) : null;
    render();
  });
  el('what-if-panel').addEventListener('click', () => {
    overlay = null;
    render();
  });

  render();
}

wire();
