// End-to-end pass against a live review service: seed a queue with three
// disagreement samples, then drive every correction through the same client
// and state transitions the browser bundle uses.
import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtemp, readFile, rm } from "node:fs/promises";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { promisify } from "node:util";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, makeClient, type Client } from "../src/api.js";
import type { EmotionLabel } from "../src/labels.js";
import {
  afterSubmitError,
  afterSubmitOk,
  allReviewed,
  currentItem,
  initialState,
  noteDraft,
  pickLabel,
  setNote,
  visibleItems,
  withServerData,
  type ReviewState,
} from "../src/state.js";

const run = promisify(execFile);

// sample -> [vote of source a, vote of source b, label the reviewer picks]
const PLANTED: Record<string, [string, string, EmotionLabel]> = {
  worried_0000: ["happy", "angry", "worried"],
  neutral_0001: ["sad", "surprised", "surprised"],
  sad_0002: ["happy", "neutral", "sad"],
};

const MAKE_SOURCES = `
import json, sys
from pathlib import Path

work = Path(sys.argv[1])
planted = json.loads(sys.argv[2])
gold = {}
for line in (work / "data.jsonl").read_text().splitlines():
    row = json.loads(line)
    if "gold_label" in row:
        gold[row["sample_id"]] = row["gold_label"]
for name, idx in (("src_a", 0), ("src_b", 1)):
    lines = []
    for sid, label in gold.items():
        vote = planted.get(sid, [label, label])[idx]
        lines.append(json.dumps({"sample_id": sid, "label": vote, "confidence": 0.9}))
    (work / f"{name}.jsonl").write_text("\\n".join(lines) + "\\n")
`;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.once("error", reject);
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr === null || typeof addr === "string") {
        reject(new Error("no port assigned"));
        return;
      }
      srv.close(() => resolve(addr.port));
    });
  });
}

async function waitForServer(client: Client): Promise<void> {
  for (let i = 0; i < 150; i++) {
    try {
      await client.getLabels();
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  throw new Error("review service did not come up");
}

let work: string;
let server: ChildProcess | null = null;
let client: Client;
let logPath: string;

beforeAll(async () => {
  work = await mkdtemp(path.join(tmpdir(), "review-ui-"));
  const opts = { cwd: work, env: { ...process.env, ECMF_DATA_DIR: work } };

  await run(
    "python3",
    ["-m", "ecmf.cli", "synth", "--n-per-class", "5", "--dim", "8",
     "--separation", "6.0", "--seed", "11", "--out", "data.jsonl"],
    opts,
  );
  await run("python3", ["-c", MAKE_SOURCES, work, JSON.stringify(PLANTED)], opts);
  const { stdout } = await run(
    "python3",
    ["-m", "ecmf.cli", "refine", "--data", "data.jsonl",
     "--sources", "src_a.jsonl,src_b.jsonl",
     "--out", "refined.jsonl", "--queue-out", "queue.jsonl"],
    opts,
  );
  expect(stdout).toContain("3 flagged for review");

  const port = await freePort();
  logPath = path.join(work, "review_log.jsonl");
  server = spawn(
    "python3",
    ["-m", "ecmf.cli", "serve-review", "--queue", "queue.jsonl",
     "--log", logPath, "--host", "127.0.0.1", "--port", String(port)],
    { ...opts, stdio: "ignore" },
  );
  client = makeClient(`http://127.0.0.1:${port}`);
  await waitForServer(client);
}, 120_000);

afterAll(async () => {
  if (server !== null) {
    server.kill("SIGTERM");
    await new Promise((r) => {
      server!.once("exit", r);
      setTimeout(r, 5_000);
    });
  }
  await rm(work, { recursive: true, force: true });
});

async function refreshed(state: ReviewState = initialState()): Promise<ReviewState> {
  const [page, stats] = await Promise.all([client.getQueue(), client.getStats()]);
  return withServerData(state, page.items, stats);
}

describe("live review round trip", () => {
  it("exposes the six labels in picker order", async () => {
    expect(await client.getLabels()).toEqual([
      "worried", "happy", "neutral", "angry", "surprised", "sad",
    ]);
  });

  it("clears a three-sample queue through the client and state layer", async () => {
    let state = await refreshed();
    expect(visibleItems(state).map((i) => i.sample_id).sort()).toEqual(
      Object.keys(PLANTED).sort(),
    );
    expect(state.stats?.needs_review).toBe(3);

    while (!allReviewed(state)) {
      const item = currentItem(state)!;
      const verdict = PLANTED[item.sample_id]![2];
      state = setNote(pickLabel(state, verdict), `corrected to ${verdict}`);
      const detail = await client.submitLabel(item.sample_id, verdict, noteDraft(state));
      expect(detail.status).toBe("reviewed");
      expect(detail.refined_label).toBe(verdict);
      state = afterSubmitOk(state, item.sample_id);
    }

    expect(allReviewed(state)).toBe(true);
    expect(state.stats?.needs_review).toBe(0);

    const stats = await client.getStats();
    expect(stats.reviewed).toBe(3);
    expect(stats.needs_review).toBe(0);

    const drained = await refreshed(state);
    expect(visibleItems(drained)).toHaveLength(0);

    const detail = await client.getSample("neutral_0001");
    expect(detail.refined_label).toBe("surprised");
    expect(detail.decision?.note).toBe("corrected to surprised");

    const logLines = (await readFile(logPath, "utf-8")).trim().split("\n");
    expect(logLines).toHaveLength(3);
  }, 60_000);

  it("surfaces a second review of the same sample as an inline conflict", async () => {
    let state = pickLabel(
      withServerData(initialState(), [await client.getSample("sad_0002")], await client.getStats()),
      "sad",
    );
    state = setNote(state, "double take");
    const err = await client
      .submitLabel("sad_0002", "sad", noteDraft(state))
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    state = afterSubmitError(state, (err as ApiError).status, (err as ApiError).message);
    expect(state.banner).toMatch(/already reviewed/i);
    expect(noteDraft(state)).toBe("double take");
  }, 30_000);
});
