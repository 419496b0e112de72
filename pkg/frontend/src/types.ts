/** Wire types mirroring the engine's HTTP API. */

export interface AssetRef {
  kind: string;
  uri: string;
  content_hash: string;
  revision: string;
}

export interface VisualConstraint {
  key: string;
  description: string;
  source: string;
}

export interface PageState {
  id: string;
  ordinal: number;
  scene_description: string;
  characters: string[];
  constraints: VisualConstraint[];
  narrative_phase: string;
  narration_asset: AssetRef | null;
  image_asset: AssetRef | null;
  failures: Record<string, string>;
}

export interface CharacterEntry {
  id: string;
  name: string;
  role: string;
  attributes: Record<string, string>;
  aliases: string[];
}

export interface IdentityInvariant {
  character: string;
  constraint_text: string;
  active: boolean;
}

export interface WorldSettings {
  style: string;
  tone: string;
  recurring_locations: string[];
  recurring_props: string[];
}

export interface StoryState {
  id: string;
  title: string;
  characters: CharacterEntry[];
  invariants_list: IdentityInvariant[];
  world: WorldSettings;
  pages: PageState[];
  prompt_suffix: string;
}

export type EditOp = { op: string } & Record<string, unknown>;

export interface CriticFinding {
  id: string;
  kind: string;
  page: string;
  detail: string;
  proposed_fix: { ops: EditOp[]; origin: string; note: string };
}

export interface EditCycleResult {
  revision: string;
  user_revision: string;
  regenerated_image_pages: string[];
  regenerated_text_pages: string[];
  critic_iterations_used: number;
  findings_remaining: CriticFinding[];
  cascaded_pages: string[];
  critic_skipped: boolean;
}

export interface RevisionSummary {
  id: string;
  parent: string | null;
  origin: string;
  note: string;
  timestamp: number;
  elapsed_seconds: number;
  dirty: {
    image_pages: string[];
    text_pages: string[];
    identity_prompt_dirty: boolean;
  };
  diff: Record<string, unknown>;
}

export interface StoryPayload {
  state: StoryState;
  head_revision: string | null;
}

export interface StoryListEntry {
  id: string;
  dir: string;
  title: string;
  n_pages: number;
  head_revision: string | null;
}
