/** UI state controller: loads the story, submits edits, derives page badges,
 * and keeps the thumbnail cache in step with the server.
 *
 * Badges come only from API responses (edit results, page failure markers,
 * surfaced findings); nothing is inferred client-side. Mutations send the
 * current head revision as an If-Match precondition; a 412 surfaces a reload
 * prompt instead of clobbering someone else's edit.
 */

import { ApiClient, ApiError, EditRequestBody } from "./api";
import { ThumbnailCache } from "./cache";
import type {
  CriticFinding,
  EditCycleResult,
  EditOp,
  PageState,
  RevisionSummary,
  StoryState,
} from "./types";

export type PageBadge = "fresh" | "regenerated-this-edit" | "failed" | "critic-flagged";

export interface PageView {
  page: PageState;
  badges: PageBadge[];
  thumbnail: unknown | null;
}

export interface Banner {
  kind: "retryable" | "reload" | "inline";
  message: string;
}

export interface UiStoryView {
  storyId: string;
  title: string;
  headRevision: string | null;
  state: StoryState;
  pages: PageView[];
  findings: CriticFinding[];
  lastResult: EditCycleResult | null;
  revisions: RevisionSummary[];
}

export class StoryController<T = unknown> {
  view: UiStoryView | null = null;
  banner: Banner | null = null;

  constructor(
    private api: ApiClient,
    public cache: ThumbnailCache<T>,
  ) {}

  async load(storyId: string): Promise<UiStoryView> {
    const payload = await this.api.getStory(storyId);
    const history = await this.api.history(storyId);
    this.view = {
      storyId,
      title: payload.state.title,
      headRevision: payload.head_revision,
      state: payload.state,
      pages: payload.state.pages.map((page) => ({
        page,
        badges: this.baseBadges(page),
        thumbnail: null,
      })),
      findings: [],
      lastResult: null,
      revisions: history.revisions,
    };
    this.banner = null;
    await this.refreshThumbnails();
    return this.view;
  }

  private baseBadges(page: PageState): PageBadge[] {
    return Object.keys(page.failures).length > 0 ? ["failed"] : ["fresh"];
  }

  /** Pull thumbnails through the hash-keyed cache; unchanged pages stay put. */
  async refreshThumbnails(): Promise<void> {
    if (!this.view) return;
    for (const pv of this.view.pages) {
      const ref = pv.page.image_asset;
      pv.thumbnail = ref
        ? await this.cache.get(this.view.storyId, pv.page.id, ref.content_hash)
        : null;
    }
  }

  /** Re-read server state after a mutation and decorate with the result. */
  private async reloadAfter(result: EditCycleResult | null): Promise<void> {
    if (!this.view) return;
    const storyId = this.view.storyId;
    const payload = await this.api.getStory(storyId);
    const history = await this.api.history(storyId);
    const regenerated = new Set(result?.regenerated_image_pages ?? []);
    const flagged = new Set((result?.findings_remaining ?? []).map((f) => f.page));
    this.view = {
      storyId,
      title: payload.state.title,
      headRevision: payload.head_revision,
      state: payload.state,
      pages: payload.state.pages.map((page) => {
        const badges: PageBadge[] = [];
        if (regenerated.has(page.id)) badges.push("regenerated-this-edit");
        if (Object.keys(page.failures).length > 0) badges.push("failed");
        if (flagged.has(page.id)) badges.push("critic-flagged");
        if (badges.length === 0) badges.push("fresh");
        return { page, badges, thumbnail: null };
      }),
      findings: result?.findings_remaining ?? [],
      lastResult: result,
      revisions: history.revisions,
    };
    await this.refreshThumbnails();
  }

  private handleError(err: unknown): never {
    if (err instanceof ApiError) {
      if (err.status === 412) {
        this.banner = {
          kind: "reload",
          message: "The story changed elsewhere; reload to continue.",
        };
      } else if (err.retryable) {
        this.banner = {
          kind: "retryable",
          message: `Backend unavailable (${err.code}); the story is untouched. Retry?`,
        };
      } else {
        this.banner = { kind: "inline", message: `${err.code}: ${err.message}` };
      }
    } else {
      this.banner = { kind: "inline", message: String(err) };
    }
    throw err;
  }

  async submitFreeText(text: string, mode = "full", seed = 0): Promise<EditCycleResult> {
    return this.submit({ text, mode, seed });
  }

  /** Structured ops path used by the sheet/world/constraint editors. */
  async submitOps(ops: EditOp[], note = "", mode = "full", seed = 0): Promise<EditCycleResult> {
    return this.submit({ ops, note, mode, seed });
  }

  private async submit(body: EditRequestBody): Promise<EditCycleResult> {
    if (!this.view) throw new Error("no story loaded");
    try {
      const { result } = await this.api.postEdit(this.view.storyId, body, this.view.headRevision);
      this.banner = null;
      await this.reloadAfter(result);
      return result;
    } catch (err) {
      this.handleError(err);
    }
  }

  async acceptFinding(findingId: string, seed = 0): Promise<EditCycleResult> {
    if (!this.view) throw new Error("no story loaded");
    try {
      const { result } = await this.api.acceptFinding(this.view.storyId, findingId, seed);
      this.banner = null;
      await this.reloadAfter(result);
      return result;
    } catch (err) {
      this.handleError(err);
    }
  }

  async revertTo(revision: string): Promise<void> {
    if (!this.view) throw new Error("no story loaded");
    try {
      await this.api.revert(this.view.storyId, revision, this.view.headRevision);
      this.banner = null;
      await this.reloadAfter(null);
    } catch (err) {
      this.handleError(err);
    }
  }

  /** Grid fingerprint: page id -> image content hash (null when missing). */
  gridHashes(): Record<string, string | null> {
    const out: Record<string, string | null> = {};
    for (const pv of this.view?.pages ?? []) {
      out[pv.page.id] = pv.page.image_asset?.content_hash ?? null;
    }
    return out;
  }
}
