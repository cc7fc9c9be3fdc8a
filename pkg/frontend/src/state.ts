/** Pure state for the queue-and-detail review flow. Every transition returns
 * a new state object; the DOM layer is a render of this plus handlers. State
 * is always rebuilt from server responses, so a page refresh reconstructs the
 * same view. */

import type { QueueItem, Stats } from "./api.js";
import type { EmotionLabel } from "./labels.js";

export interface ReviewState {
  /** needs_review items as last reported by the server */
  items: QueueItem[];
  /** position within the *visible* (filtered) items */
  index: number;
  /** vote-pattern filter, or null for everything */
  filter: string | null;
  /** label picked for the current item; submit stays disabled until set */
  picked: EmotionLabel | null;
  /** note drafts per sample, kept across errors and item switches */
  notes: Record<string, string>;
  /** connection failure / conflict message, or null */
  banner: string | null;
  stats: Stats | null;
}

export function initialState(): ReviewState {
  return {
    items: [],
    index: 0,
    filter: null,
    picked: null,
    notes: {},
    banner: null,
    stats: null,
  };
}

/** How the sources disagreed, as a canonical string: the distinct voted
 * labels, sorted. Samples with the same pattern pose the same triage
 * question, which is what the queue filter groups by. */
export function votePattern(item: QueueItem): string {
  const voted = [...new Set(item.source_votes.map((v) => v.label))].sort();
  return voted.join(" / ");
}

/** Distinct patterns in the queue with their counts, sorted by count then
 * pattern, for the filter dropdown. */
export function patternCounts(state: ReviewState): Array<{ pattern: string; count: number }> {
  const counts = new Map<string, number>();
  for (const item of state.items) {
    const p = votePattern(item);
    counts.set(p, (counts.get(p) ?? 0) + 1);
  }
  return [...counts.entries()]
    .map(([pattern, count]) => ({ pattern, count }))
    .sort((a, b) => b.count - a.count || a.pattern.localeCompare(b.pattern));
}

export function visibleItems(state: ReviewState): QueueItem[] {
  if (state.filter === null) return state.items;
  return state.items.filter((item) => votePattern(item) === state.filter);
}

export function currentItem(state: ReviewState): QueueItem | null {
  return visibleItems(state)[state.index] ?? null;
}

export function allReviewed(state: ReviewState): boolean {
  return state.items.length === 0;
}

export function canSubmit(state: ReviewState): boolean {
  return state.picked !== null && currentItem(state) !== null;
}

export function noteDraft(state: ReviewState): string {
  const item = currentItem(state);
  return item ? (state.notes[item.sample_id] ?? "") : "";
}

function clampIndex(state: ReviewState): ReviewState {
  const n = visibleItems(state).length;
  const index = n === 0 ? 0 : Math.min(state.index, n - 1);
  return { ...state, index };
}

/** Replace the queue and stats with a fresh server snapshot. Keeps note
 * drafts and the filter; keeps the position pointed at the same sample when
 * it still exists, otherwise clamps. */
export function withServerData(state: ReviewState, items: QueueItem[], stats: Stats): ReviewState {
  const current = currentItem(state);
  let next: ReviewState = { ...state, items, stats, banner: null };
  if (current) {
    const pos = visibleItems(next).findIndex((i) => i.sample_id === current.sample_id);
    next.index = pos >= 0 ? pos : state.index;
  }
  return clampIndex(next);
}

export function setFilter(state: ReviewState, filter: string | null): ReviewState {
  return clampIndex({ ...state, filter, index: 0, picked: null });
}

export function selectIndex(state: ReviewState, index: number): ReviewState {
  return clampIndex({ ...state, index, picked: null, banner: null });
}

export function moveBy(state: ReviewState, delta: number): ReviewState {
  return selectIndex(state, Math.max(0, state.index + delta));
}

export function pickLabel(state: ReviewState, label: EmotionLabel): ReviewState {
  return { ...state, picked: label, banner: null };
}

export function setNote(state: ReviewState, text: string): ReviewState {
  const item = currentItem(state);
  if (!item) return state;
  return { ...state, notes: { ...state.notes, [item.sample_id]: text } };
}

/** A 200 from the server: the sample leaves the queue, its draft is spent,
 * and the view advances to what is now at the same position. Stats shift one
 * record from needs_review to reviewed (the next poll overwrites this with
 * server truth). */
export function afterSubmitOk(state: ReviewState, sampleId: string): ReviewState {
  const notes = { ...state.notes };
  delete notes[sampleId];
  const stats = state.stats
    ? {
        ...state.stats,
        needs_review: state.stats.needs_review - 1,
        reviewed: state.stats.reviewed + 1,
      }
    : null;
  return clampIndex({
    ...state,
    items: state.items.filter((i) => i.sample_id !== sampleId),
    picked: null,
    banner: null,
    notes,
    stats,
  });
}

/** A 409/422/other API failure: surface the message inline and keep the note
 * draft so nothing typed is lost. A conflict additionally means our copy of
 * the record is stale; the caller re-fetches the queue after this. */
export function afterSubmitError(state: ReviewState, status: number, message: string): ReviewState {
  const text =
    status === 409
      ? `Already reviewed elsewhere — refreshing. (${message})`
      : status === 422
        ? `Rejected: ${message}`
        : `Submit failed (${status}): ${message}`;
  return { ...state, banner: text };
}

export function connectionLost(state: ReviewState, message: string): ReviewState {
  return { ...state, banner: `Cannot reach the review service: ${message}` };
}
