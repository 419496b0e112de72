/** End-to-end: drive the real engine service (mock generation backends)
 * through the UI controller and verify refetch minimality and revert.
 *
 * Spawns the Python service on a free port; requires the engine package to be
 * installed (pip install -e . at the repo root).
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { ThumbnailCache } from "../src/cache";
import { StoryController } from "../src/store";

const PORT = 8750 + Math.floor(Math.random() * 200);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workdir: string;

async function waitForHealthy(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/healthz`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("service did not become healthy in time");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "storystate-ui-"));
  server = spawn(
    "python3",
    ["-m", "storystate.cli", "serve", "--root", workdir, "--port", String(PORT)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stderr?.on("data", (d) => process.stderr.write(`[serve] ${d}`));
  await waitForHealthy();
}, 40000);

afterAll(() => {
  server?.kill("SIGTERM");
  rmSync(workdir, { recursive: true, force: true });
});

function freshController(api: ApiClient) {
  const cache = new ThumbnailCache<string>(async (storyId, pageId) => {
    const { bytes, hash } = await api.fetchAsset(storyId, pageId, "page_image");
    return { value: `blob:${hash}:${bytes.byteLength}`, hash };
  });
  return { cache, controller: new StoryController<string>(api, cache) };
}

describe("UI against the live mock-backed service", () => {
  it("page-3 coat edit refetches exactly one thumbnail; revert restores the grid", async () => {
    const api = new ApiClient(BASE);
    const created = await api.createStory("phoenix keeper by the sea", 10, 5);
    expect(created.revision).toBe("r0");

    const { cache, controller } = freshController(api);
    await controller.load(created.story_id);
    expect(controller.view!.pages).toHaveLength(10);
    expect(cache.fetchCount).toBe(10);
    const gridBefore = controller.gridHashes();

    const result = await controller.submitFreeText(
      "on page 3, Hero should wear the same yellow coat as on page 1",
      "full",
      5,
    );
    expect(result.regenerated_image_pages).toEqual(["p3"]);
    expect(cache.fetchCount).toBe(11); // exactly one thumbnail refetched
    const badges = Object.fromEntries(
      controller.view!.pages.map((p) => [p.page.id, p.badges]),
    );
    expect(badges["p3"]).toContain("regenerated-this-edit");
    expect(badges["p1"]).toEqual(["fresh"]);
    expect(controller.view!.headRevision).toBe("r1");

    await controller.revertTo("r0");
    expect(controller.gridHashes()).toEqual(gridBefore);
    expect(cache.fetchCount).toBe(11); // revert served entirely from the hash cache
    expect(controller.view!.headRevision).toBe("r2");
  }, 30000);

  it("constraint editor ops drive the non-LLM edit path end to end", async () => {
    const api = new ApiClient(BASE);
    const created = await api.createStory("tortoise in the rain", 4, 9);
    const { cache, controller } = freshController(api);
    await controller.load(created.story_id);
    expect(cache.fetchCount).toBe(4);

    const result = await controller.submitOps(
      [{ op: "set_page_constraint", page: "p2", key: "umbrella", description: "a red umbrella overhead" }],
      "add umbrella",
    );
    expect(result.regenerated_image_pages).toEqual(["p2"]);
    expect(cache.fetchCount).toBe(5);

    const state = controller.view!.state;
    const page2 = state.pages.find((p) => p.id === "p2")!;
    expect(page2.constraints.some((c) => c.key === "umbrella")).toBe(true);
  }, 30000);

  it("stale If-Match yields a reload prompt without mutating", async () => {
    const api = new ApiClient(BASE);
    const created = await api.createStory("owl at midnight", 3, 2);
    const { controller } = freshController(api);
    await controller.load(created.story_id);
    controller.view!.headRevision = "r9000";
    await expect(
      controller.submitOps([
        { op: "set_page_constraint", page: "p1", key: "moon", description: "full moon" },
      ]),
    ).rejects.toThrow();
    expect(controller.banner?.kind).toBe("reload");
    const fresh = await api.getStory(created.story_id);
    expect(fresh.head_revision).toBe("r0");
  }, 30000);
});
