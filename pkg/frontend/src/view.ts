/**
 * Pure rendering: view state in, HTML strings out. Keeping these free of
 * DOM access makes them directly testable under node.
 */

import { TreeDoc, TreeNodeDoc } from './api.js';
import { AnswerLogEntry, SessionView, WhatIfOverlay } from './store.js';

/** Monotone color scale anchored at mastery 0 (pale) and 1 (saturated). */
export function masteryColor(p: number): string {
  const clamped = Math.min(1, Math.max(0, p));
  const hue = 210; // single hue; only lightness moves, so order is obvious
  const lightness = 95 - clamped * 55;
  return `hsl(${hue}, 70%, ${lightness.toFixed(1)}%)`;
}

export function formatProb(p: number): string {
  return p.toFixed(3);
}

function escapeHtml(text: string): string {
  return text
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

function childrenOf(tree: TreeDoc): Map<string | null, TreeNodeDoc[]> {
  const map = new Map<string | null, TreeNodeDoc[]>();
  for (const node of tree.nodes) {
    const list = map.get(node.parent) ?? [];
    list.push(node);
    map.set(node.parent, list);
  }
  return map;
}

/** Collapsible hierarchy; leaves carry data-kc so the shell can wire
 * what-if selection. */
export function renderMasteryTree(
  tree: TreeDoc,
  mastery: Record<string, number>,
  recommendedKc: string | null,
): string {
  const byParent = childrenOf(tree);

  const renderNode = (node: TreeNodeDoc): string => {
    const p = mastery[node.id] ?? 0;
    const chip = `<span class="chip" style="background:${masteryColor(p)}"></span>`;
    const highlight = node.id === recommendedKc ? ' recommended' : '';
    const kids = byParent.get(node.id) ?? [];
    const label =
      `${chip}<span class="name">${escapeHtml(node.name)}</span>` +
      `<span class="prob">${formatProb(p)}</span>`;
    if (kids.length === 0) {
      return `<li class="leaf${highlight}" data-kc="${escapeHtml(node.id)}">${label}</li>`;
    }
    const inner = kids.map(renderNode).join('');
    return `<li class="branch"><details open><summary>${label}</summary><ul>${inner}</ul></details></li>`;
  };

  const roots = byParent.get(null) ?? [];
  return `<ul class="mastery-tree">${roots.map(renderNode).join('')}</ul>`;
}

export function renderRecommendation(view: SessionView): string {
  const rec = view.recommendation;
  if (!rec) return '<p class="empty">No recommendation yet.</p>';
  const question = rec.question
    ? `<blockquote class="question">${escapeHtml(rec.question.question_text)}</blockquote>`
    : '<p class="empty">No generated question attached.</p>';
  return [
    `<h3>Practice next: <em>${escapeHtml(rec.kc_name)}</em></h3>`,
    `<p>Education value ${rec.education_value.toFixed(4)} ` +
      `(current total mastery ${rec.baseline.toFixed(4)}, ` +
      `mastery rank ${rec.mastery_rank})</p>`,
    question,
  ].join('');
}

export function renderAnswerLog(log: AnswerLogEntry[]): string {
  if (log.length === 0) return '<p class="empty">No answers yet.</p>';
  const rows = log
    .map(
      (entry, i) =>
        `<li>#${i + 1} ${escapeHtml(entry.kcName)}: ` +
        `<strong>${entry.correct ? 'correct' : 'incorrect'}</strong> ` +
        `<span class="prob">total ${entry.totalMasteryAfter.toFixed(4)}</span></li>`,
    )
    .join('');
  return `<ol class="answer-log">${rows}</ol>`;
}

export function renderWhatIf(overlay: WhatIfOverlay | null): string {
  if (!overlay) return '';
  const delta = overlay.value - overlay.headlineValue;
  return (
    `<div class="what-if">Practicing <em>${escapeHtml(overlay.kcName)}</em> ` +
    `yields ${overlay.value.toFixed(4)} total mastery vs ` +
    `${overlay.headlineValue.toFixed(4)} for the recommended concept ` +
    `(${delta >= 0 ? '+' : ''}${delta.toFixed(4)}).</div>`
  );
}

export function renderStatus(view: SessionView): string {
  if (view.error) return `<div class="banner error">${escapeHtml(view.error)}</div>`;
  if (view.busy) return '<div class="banner busy">Working&hellip;</div>';
  return '';
}
