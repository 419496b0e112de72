/** Hash-keyed thumbnail cache.
 *
 * Entries are keyed by the asset's content hash, so a page whose image did
 * not change never refetches, and a revert back to previously seen bytes is a
 * pure cache hit. The counters are the instrumentation the refetch-minimality
 * checks rely on: `fetchCount` increments only when bytes actually cross the
 * network.
 */

export interface FetchedThumbnail<T> {
  value: T;
  hash: string;
}

export type ThumbnailFetcher<T> = (
  storyId: string,
  pageId: string,
) => Promise<FetchedThumbnail<T>>;

export class ThumbnailCache<T> {
  private byHash = new Map<string, T>();
  fetchCount = 0;
  hitCount = 0;

  constructor(private fetcher: ThumbnailFetcher<T>) {}

  /** Value for the page's current content hash, fetching only on a miss. */
  async get(storyId: string, pageId: string, contentHash: string): Promise<T> {
    const cached = this.byHash.get(contentHash);
    if (cached !== undefined) {
      this.hitCount += 1;
      return cached;
    }
    const fetched = await this.fetcher(storyId, pageId);
    this.fetchCount += 1;
    if (fetched.hash && fetched.hash !== contentHash) {
      // The asset moved between the state read and the asset read; key by
      // what the server actually returned so the bytes stay addressable.
      this.byHash.set(fetched.hash, fetched.value);
    }
    this.byHash.set(contentHash, fetched.value);
    return fetched.value;
  }

  hasHash(contentHash: string): boolean {
    return this.byHash.has(contentHash);
  }

  get size(): number {
    return this.byHash.size;
  }
}
