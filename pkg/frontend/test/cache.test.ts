import { describe, expect, it } from "vitest";

import { ThumbnailCache } from "../src/cache";

function countingFetcher() {
  const calls: string[] = [];
  const fetcher = async (storyId: string, pageId: string) => {
    calls.push(`${storyId}/${pageId}`);
    return { value: `bytes-for-${pageId}-${calls.length}`, hash: "" };
  };
  return { calls, fetcher };
}

describe("ThumbnailCache", () => {
  it("fetches once per content hash", async () => {
    const { calls, fetcher } = countingFetcher();
    const cache = new ThumbnailCache(fetcher);
    const a = await cache.get("s", "p1", "hash-a");
    const again = await cache.get("s", "p1", "hash-a");
    expect(a).toBe(again);
    expect(calls).toHaveLength(1);
    expect(cache.fetchCount).toBe(1);
    expect(cache.hitCount).toBe(1);
  });

  it("a changed hash refetches exactly once", async () => {
    const { calls, fetcher } = countingFetcher();
    const cache = new ThumbnailCache(fetcher);
    await cache.get("s", "p1", "hash-a");
    await cache.get("s", "p1", "hash-b");
    expect(calls).toHaveLength(2);
  });

  it("reverting to previously seen bytes is a pure hit", async () => {
    const { fetcher } = countingFetcher();
    const cache = new ThumbnailCache(fetcher);
    const original = await cache.get("s", "p1", "hash-a");
    await cache.get("s", "p1", "hash-b");
    const back = await cache.get("s", "p1", "hash-a");
    expect(back).toBe(original);
    expect(cache.fetchCount).toBe(2);
    expect(cache.hitCount).toBe(1);
  });

  it("distinct pages sharing bytes share the cache entry", async () => {
    const { calls, fetcher } = countingFetcher();
    const cache = new ThumbnailCache(fetcher);
    await cache.get("s", "p1", "same-hash");
    await cache.get("s", "p2", "same-hash");
    expect(calls).toHaveLength(1);
  });
});
