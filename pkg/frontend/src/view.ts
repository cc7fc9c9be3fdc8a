/** DOM rendering. Everything on screen is a function of (state, detail);
 * handlers are injected so this module stays free of fetch and timers. */

import type { SampleDetail } from "./api.js";
import { LABELS, type EmotionLabel } from "./labels.js";
import {
  allReviewed,
  canSubmit,
  currentItem,
  noteDraft,
  patternCounts,
  visibleItems,
  votePattern,
  type ReviewState,
} from "./state.js";

export interface Handlers {
  onSelect(index: number): void;
  onFilter(pattern: string | null): void;
  onPick(label: EmotionLabel): void;
  onNote(text: string): void;
  onSubmit(): void;
  onRetry(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderStats(state: ReviewState): HTMLElement {
  const bar = el("div", "stats");
  if (!state.stats) return bar;
  const s = state.stats;
  const parts: Array<[string, number]> = [
    ["total", s.total],
    ["auto", s.auto],
    ["to review", s.needs_review],
    ["reviewed", s.reviewed],
    ["changed", s.changed_from_original],
  ];
  for (const [name, value] of parts) {
    const chip = el("span", "stat");
    chip.append(el("b", undefined, String(value)), ` ${name}`);
    bar.append(chip);
  }
  return bar;
}

function renderBanner(state: ReviewState, handlers: Handlers): HTMLElement | null {
  if (!state.banner) return null;
  const banner = el("div", "banner", state.banner + " ");
  const retry = el("button", "retry", "retry");
  retry.addEventListener("click", handlers.onRetry);
  banner.append(retry);
  return banner;
}

function renderFilter(state: ReviewState, handlers: Handlers): HTMLElement {
  const wrap = el("label", "filter", "disagreement: ");
  const select = el("select");
  const all = el("option", undefined, `all (${state.items.length})`);
  all.value = "";
  select.append(all);
  for (const { pattern, count } of patternCounts(state)) {
    const opt = el("option", undefined, `${pattern} (${count})`);
    opt.value = pattern;
    if (state.filter === pattern) opt.selected = true;
    select.append(opt);
  }
  select.addEventListener("change", () => handlers.onFilter(select.value || null));
  wrap.append(select);
  return wrap;
}

function renderQueue(state: ReviewState, handlers: Handlers): HTMLElement {
  const list = el("ul", "queue");
  visibleItems(state).forEach((item, i) => {
    const row = el("li", i === state.index ? "row current" : "row");
    row.append(
      el("span", "sid", item.sample_id),
      el("span", "pattern", `${item.original_label ?? "—"} vs ${votePattern(item)}`),
    );
    row.addEventListener("click", () => handlers.onSelect(i));
    list.append(row);
  });
  return list;
}

function renderVotes(detail: SampleDetail): HTMLElement {
  const table = el("table", "votes");
  const head = el("tr");
  for (const h of ["source", "vote", "confidence"]) head.append(el("th", undefined, h));
  table.append(head);
  const orig = el("tr", "original");
  orig.append(
    el("td", undefined, "original annotation"),
    el("td", undefined, detail.original_label ?? "—"),
    el("td", undefined, ""),
  );
  table.append(orig);
  for (const v of detail.source_votes) {
    const row = el("tr");
    row.append(
      el("td", undefined, v.source_id),
      el("td", undefined, v.label),
      el("td", undefined, v.confidence.toFixed(2)),
    );
    table.append(row);
  }
  return table;
}

function renderPicker(state: ReviewState, handlers: Handlers): HTMLElement {
  const picker = el("div", "picker");
  LABELS.forEach((label, i) => {
    const btn = el("button", state.picked === label ? "label picked" : "label");
    btn.append(el("kbd", undefined, String(i + 1)), ` ${label}`);
    btn.addEventListener("click", () => handlers.onPick(label));
    picker.append(btn);
  });
  return picker;
}

function renderDetail(
  state: ReviewState,
  detail: SampleDetail | null,
  handlers: Handlers,
): HTMLElement {
  const pane = el("section", "detail");
  const item = currentItem(state);
  if (!item) return pane;

  const items = visibleItems(state);
  pane.append(el("div", "progress", `sample ${state.index + 1} of ${items.length} in queue`));
  pane.append(el("h2", undefined, item.sample_id));

  if (detail && detail.sample_id === item.sample_id) {
    pane.append(el("blockquote", "transcript", detail.transcript ?? "(no transcript)"));
    pane.append(renderVotes(detail));
  } else {
    pane.append(el("div", "loading", "loading sample…"));
  }

  pane.append(renderPicker(state, handlers));

  const note = el("textarea", "note") as HTMLTextAreaElement;
  note.placeholder = "reviewer note (optional)";
  note.value = noteDraft(state);
  note.addEventListener("input", () => handlers.onNote(note.value));
  pane.append(note);

  const submit = el("button", "submit", "submit correction") as HTMLButtonElement;
  submit.disabled = !canSubmit(state);
  submit.addEventListener("click", handlers.onSubmit);
  pane.append(submit);
  return pane;
}

export function render(
  root: HTMLElement,
  state: ReviewState,
  detail: SampleDetail | null,
  handlers: Handlers,
): void {
  root.textContent = "";
  const header = el("header");
  header.append(el("h1", undefined, "label review"), renderStats(state));
  root.append(header);

  const banner = renderBanner(state, handlers);
  if (banner) root.append(banner);

  if (allReviewed(state)) {
    root.append(el("div", "done", "All reviewed — the queue is empty. 🎉"));
    return;
  }

  root.append(renderFilter(state, handlers));
  const main = el("main", "split");
  main.append(renderQueue(state, handlers), renderDetail(state, detail, handlers));
  root.append(main);
}
