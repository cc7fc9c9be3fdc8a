import { ApiError, makeClient, type SampleDetail } from "./api.js";
import { keyToLabel } from "./labels.js";
import {
  afterSubmitError,
  afterSubmitOk,
  canSubmit,
  connectionLost,
  currentItem,
  initialState,
  moveBy,
  noteDraft,
  pickLabel,
  selectIndex,
  setFilter,
  setNote,
  withServerData,
  type ReviewState,
} from "./state.js";
import { render, type Handlers } from "./view.js";

const client = makeClient("");
const root = document.getElementById("app")!;

let state: ReviewState = initialState();
let detail: SampleDetail | null = null;
const detailCache = new Map<string, SampleDetail>();

function update(next: ReviewState): void {
  state = next;
  const item = currentItem(state);
  detail = item ? (detailCache.get(item.sample_id) ?? null) : null;
  render(root, state, detail, handlers);
  if (item && !detailCache.has(item.sample_id)) void loadDetail(item.sample_id);
}

async function loadDetail(sampleId: string): Promise<void> {
  try {
    const d = await client.getSample(sampleId);
    detailCache.set(sampleId, d);
  } catch {
    return; // the detail pane keeps its loading row; a retry happens on reselect
  }
  if (currentItem(state)?.sample_id === sampleId) update(state);
}

async function refresh(): Promise<void> {
  try {
    const [queue, stats] = await Promise.all([client.getQueue(), client.getStats()]);
    update(withServerData(state, queue.items, stats));
  } catch (err) {
    update(connectionLost(state, err instanceof Error ? err.message : String(err)));
  }
}

async function submit(): Promise<void> {
  const item = currentItem(state);
  if (!item || !state.picked) return;
  try {
    const updated = await client.submitLabel(item.sample_id, state.picked, noteDraft(state) || null);
    detailCache.set(updated.sample_id, updated);
    update(afterSubmitOk(state, item.sample_id));
  } catch (err) {
    if (err instanceof ApiError) {
      update(afterSubmitError(state, err.status, err.message));
      if (err.status === 409) {
        detailCache.delete(item.sample_id);
        await refresh(); // our copy was stale; rebuild from server truth
      }
    } else {
      update(connectionLost(state, err instanceof Error ? err.message : String(err)));
    }
  }
}

const handlers: Handlers = {
  onSelect: (index) => update(selectIndex(state, index)),
  onFilter: (pattern) => update(setFilter(state, pattern)),
  onPick: (label) => update(pickLabel(state, label)),
  onNote: (text) => update(setNote(state, text)),
  onSubmit: () => void submit(),
  onRetry: () => void refresh(),
};

document.addEventListener("keydown", (event) => {
  const target = event.target as HTMLElement | null;
  if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) return;
  const label = keyToLabel(event.key);
  if (label) {
    update(pickLabel(state, label));
  } else if (event.key === "ArrowDown" || event.key === "j") {
    update(moveBy(state, 1));
  } else if (event.key === "ArrowUp" || event.key === "k") {
    update(moveBy(state, -1));
  } else if (event.key === "Enter" && canSubmit(state)) {
    void submit();
  }
});

void refresh();
