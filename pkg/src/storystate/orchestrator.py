"""Lifecycle coordination: initial construction, edit cycles with selective
regeneration, the critic loop, and the ablation modes.

The engine is stateless above the project store: every operation loads the
story from disk, holds the project lock while mutating, and writes back the
new head. Regeneration is driven entirely by the dirty set, and each pass
carries the upcoming revision id as a nonce so deterministic backends make
every regeneration observable in asset hashes while identical runs reproduce
identical bytes.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

from .agents import CriticFinding, PageAssets, critique, parse_edit_request, plan, build_state
from .backends import (
    BackendError,
    GenerationBackends,
    ImagePageSpec,
    ImageRequest,
    NarrationRequest,
)
from .edits import (
    DirtySet,
    EditBatch,
    History,
    StateDiff,
    apply_batch,
    compute_dirty_set,
    diff_states,
    revert as history_revert,
)
from .errors import EmptyStory, MalformedAgentOutput, UngroundedReference
from .model import StoryState
from .persistence import ProjectStore
from .prompts import compile as compile_prompts
from .prompts import page_identity_context

log = logging.getLogger(__name__)


@dataclass
class EngineMode:
    """Switchable engine behavior, covering the ablation variants.

    ``explicit_state=False`` bypasses state mutation and appends the request
    text to every page prompt (prompt-only baseline). ``page_level_regen=False``
    regenerates every page each cycle. ``auto_accept_critic`` controls whether
    critic fixes apply immediately or are surfaced for confirmation.
    """

    explicit_state: bool = True
    page_level_regen: bool = True
    critic_enabled: bool = True
    critic_max_iters: int = 3
    auto_accept_critic: bool = False

    NAMES = ("full", "no-state", "no-page-regen", "no-critic")

    @classmethod
    def named(cls, name: str) -> "EngineMode":
        if name == "full":
            return cls()
        if name == "no-state":
            return cls(explicit_state=False)
        if name == "no-page-regen":
            return cls(page_level_regen=False)
        if name == "no-critic":
            return cls(critic_enabled=False)
        raise ValueError(f"unknown mode {name!r}; expected one of {', '.join(cls.NAMES)}")


@dataclass
class EditCycleResult:
    """What one edit cycle actually did; the regenerated sets reflect executed
    work, including critic-triggered passes."""

    revision: str
    user_revision: str
    regenerated_image_pages: set[str] = field(default_factory=set)
    regenerated_text_pages: set[str] = field(default_factory=set)
    critic_iterations_used: int = 0
    findings_remaining: list[CriticFinding] = field(default_factory=list)
    cascaded_pages: set[str] = field(default_factory=set)
    critic_skipped: bool = False

    def to_dict(self) -> dict:
        return {
            "revision": self.revision,
            "user_revision": self.user_revision,
            "regenerated_image_pages": sorted(self.regenerated_image_pages),
            "regenerated_text_pages": sorted(self.regenerated_text_pages),
            "critic_iterations_used": self.critic_iterations_used,
            "findings_remaining": [f.to_dict() for f in self.findings_remaining],
            "cascaded_pages": sorted(self.cascaded_pages),
            "critic_skipped": self.critic_skipped,
        }


def derive_story_id(user_prompt: str, seed: int) -> str:
    digest = hashlib.sha256(f"{user_prompt}\x1f{seed}".encode("utf-8")).hexdigest()[:8]
    return f"story-{digest}"


class Engine:
    """Binds a backend bundle to one project directory."""

    def __init__(self, backends: GenerationBackends, store: ProjectStore):
        self.backends = backends
        self.store = store

    # --- generation helpers ---------------------------------------------------

    def _generate_text(self, state: StoryState, page_ids: set[str], nonce: str) -> set[str]:
        done: set[str] = set()
        for page in state.pages_in_order():
            if page.id not in page_ids:
                continue
            request = NarrationRequest(
                identity_context=page_identity_context(state, page.id),
                scene=page.scene_description,
                phase=page.narrative_phase,
                character_names=[state.character_by_id(c).name for c in page.characters],
                tone=state.world.tone,
            )
            try:
                narration = self.backends.text.generate_narration(request)
            except BackendError as exc:
                page.failures["narration_text"] = str(exc)
                log.warning("narration failed for %s: %s", page.id, exc)
                continue
            ref = self.store.assets.put(narration.encode("utf-8"), "narration_text", nonce)
            page.narration_asset = ref
            page.failures.pop("narration_text", None)
            done.add(page.id)
        return done

    def _generate_images(
        self,
        state: StoryState,
        page_ids: set[str],
        seed: int,
        nonce: str,
        append_text: str = "",
    ) -> set[str]:
        if not page_ids:
            return set()
        bundle = compile_prompts(state)
        specs = []
        for prompt in bundle.pages:
            if prompt.page in page_ids:
                text = f"{prompt.text}, {append_text}" if append_text else prompt.text
                specs.append(ImagePageSpec(page_id=prompt.page, prompt_text=text))
        request = ImageRequest(
            identity_text=bundle.identity.text, pages=specs, seed=seed, nonce=nonce
        )
        done: set[str] = set()
        try:
            images = self.backends.image.generate_images(request)
            batches = list(zip(specs, images))
        except BackendError:
            # Retry page by page so one bad page cannot sink the batch.
            batches = []
            for spec in specs:
                single = ImageRequest(
                    identity_text=bundle.identity.text, pages=[spec], seed=seed, nonce=nonce
                )
                try:
                    batches.append((spec, self.backends.image.generate_images(single)[0]))
                except BackendError as exc:
                    page = state.page_by_id(spec.page_id)
                    page.failures["page_image"] = str(exc)
                    log.warning("image generation failed for %s: %s", spec.page_id, exc)
        for spec, data in batches:
            page = state.page_by_id(spec.page_id)
            page.image_asset = self.store.assets.put(data, "page_image", nonce)
            page.failures.pop("page_image", None)
            done.add(spec.page_id)
        return done

    # --- story creation ----------------------------------------------------------

    def create_story(
        self,
        user_prompt: str,
        n_pages: int,
        seed: int = 0,
        story_id: str = "",
    ) -> tuple[StoryState, object, list]:
        """Plan, build the state, generate all assets, persist revision 0.

        Pages whose generation fails are flagged in ``failures`` and can be
        retried individually; the persisted state is always complete and valid.
        """
        if n_pages < 1:
            raise EmptyStory("cannot create a story with zero pages")
        planner_output = plan(self.backends.chat, user_prompt, n_pages)
        state = build_state(
            planner_output,
            self.backends.chat,
            story_id=story_id or derive_story_id(user_prompt, seed),
        )
        history = History()
        nonce = history.next_id()
        started = time.monotonic()
        all_ids = {p.id for p in state.pages}
        self._generate_text(state, all_ids, nonce)
        self._generate_images(state, all_ids, seed, nonce)
        revision = history.commit(
            state,
            StateDiff(),
            DirtySet(image_pages=set(all_ids), text_pages=set(all_ids), identity_prompt_dirty=True),
            origin="planner",
            note=user_prompt,
            elapsed_seconds=time.monotonic() - started,
        )
        with self.store.lock():
            self.store.write(state, history)
        assets = [p.image_asset for p in state.pages if p.image_asset] + [
            p.narration_asset for p in state.pages if p.narration_asset
        ]
        return state, revision, assets

    # --- edit cycle ------------------------------------------------------------------

    def run_edit_cycle(
        self,
        request: str | EditBatch,
        mode: EngineMode | None = None,
        seed: int = 0,
    ) -> EditCycleResult:
        """One user turn: parse, apply, compute dirty, regenerate, critic, commit."""
        mode = mode or EngineMode()
        started = time.monotonic()
        with self.store.lock():
            state, history = self.store.load()
            if isinstance(request, str):
                batch = parse_edit_request(self.backends.chat, state, request)
            else:
                batch = request

            if not mode.explicit_state:
                return self._prompt_only_cycle(state, history, batch, seed, started, mode)

            new_state, diff = apply_batch(state, batch)
            dirty = compute_dirty_set(state, new_state, diff)
            all_ids = {p.id for p in new_state.pages}
            if mode.page_level_regen:
                want_images, want_text = set(dirty.image_pages), set(dirty.text_pages)
            else:
                want_images, want_text = set(all_ids), set(all_ids)

            nonce = history.next_id()
            did_text = self._generate_text(new_state, want_text, nonce)
            did_images = self._generate_images(new_state, want_images, seed, nonce)
            executed = DirtySet(
                image_pages=did_images,
                text_pages=did_text,
                identity_prompt_dirty=dirty.identity_prompt_dirty,
            )
            user_rev = history.commit(
                new_state,
                diff,
                executed,
                origin=batch.origin,
                note=batch.note,
                elapsed_seconds=time.monotonic() - started,
            )

            result = EditCycleResult(
                revision=user_rev.id,
                user_revision=user_rev.id,
                regenerated_image_pages=set(did_images),
                regenerated_text_pages=set(did_text),
            )
            if mode.critic_enabled and did_images:
                self._critic_pass(history, set(did_images), mode, seed, result)
            head = history.head
            result.revision = head.id
            self.store.write(head.state_snapshot, history)
            self.store.write_pending_findings(result.findings_remaining)
            return result

    def _prompt_only_cycle(
        self,
        state: StoryState,
        history: History,
        batch: EditBatch,
        seed: int,
        started: float,
        mode: EngineMode,
    ) -> EditCycleResult:
        """Ablation without explicit state: the request text is appended to every
        page prompt and the whole book regenerates; the state itself never moves."""
        request_text = batch.render_text()
        new_state = state.clone()
        all_ids = {p.id for p in new_state.pages}
        nonce = history.next_id()
        did_images = self._generate_images(new_state, all_ids, seed, nonce, append_text=request_text)
        rev = history.commit(
            new_state,
            diff_states(state, new_state),
            DirtySet(image_pages=did_images, text_pages=set(), identity_prompt_dirty=False),
            origin=batch.origin,
            note=f"[prompt-only] {request_text}",
            elapsed_seconds=time.monotonic() - started,
        )
        result = EditCycleResult(
            revision=rev.id,
            user_revision=rev.id,
            regenerated_image_pages=set(did_images),
        )
        self.store.write(new_state, history)
        self.store.write_pending_findings([])
        return result

    # --- critic loop -------------------------------------------------------------------

    def _load_page_assets(self, state: StoryState, page_id: str) -> PageAssets:
        page = state.page_by_id(page_id)
        narration = ""
        image_bytes = b""
        image_hash = ""
        if page.narration_asset and self.store.assets.has(page.narration_asset.content_hash):
            narration = self.store.assets.read(page.narration_asset.content_hash).decode("utf-8")
        if page.image_asset and self.store.assets.has(page.image_asset.content_hash):
            image_bytes = self.store.assets.read(page.image_asset.content_hash)
            image_hash = page.image_asset.content_hash
        return PageAssets(narration_text=narration, image_bytes=image_bytes, image_hash=image_hash)

    def _critic_pass(
        self,
        history: History,
        pages: set[str],
        mode: EngineMode,
        seed: int,
        result: EditCycleResult,
    ) -> None:
        """Critique the regenerated pages; apply fixes when the policy allows.

        Agent failures degrade to a skipped critic with a warning; they never
        abort the cycle. Fixes touch only the critiqued pages plus whatever a
        sheet-level fix cascades to (reported via ``cascaded_pages``).
        """
        state = history.head.state_snapshot.clone()
        targets = [p.id for p in state.pages_in_order() if p.id in pages]
        try:
            for iteration in range(1, mode.critic_max_iters + 1):
                result.critic_iterations_used = iteration
                iter_started = time.monotonic()
                findings: list[CriticFinding] = []
                for page_id in targets:
                    report = critique(
                        self.backends.chat, state, page_id, self._load_page_assets(state, page_id)
                    )
                    findings.extend(report.findings)
                if not findings:
                    result.findings_remaining = []
                    return
                result.findings_remaining = findings
                if not mode.auto_accept_critic:
                    return
                ops = [op for f in findings for op in f.proposed_fix.ops]
                batch = EditBatch(ops=ops, origin="critic", note="critic corrections")
                new_state, diff = apply_batch(state, batch)
                dirty = compute_dirty_set(state, new_state, diff)
                nonce = history.next_id()
                did_text = self._generate_text(new_state, dirty.text_pages, nonce)
                did_images = self._generate_images(new_state, dirty.image_pages, seed, nonce)
                history.commit(
                    new_state,
                    diff,
                    DirtySet(did_images, did_text, dirty.identity_prompt_dirty),
                    origin="critic",
                    note=batch.note,
                    elapsed_seconds=time.monotonic() - iter_started,
                )
                result.regenerated_image_pages |= did_images
                result.regenerated_text_pages |= did_text
                result.cascaded_pages |= did_images - pages
                state = new_state
        except (BackendError, MalformedAgentOutput, UngroundedReference) as exc:
            log.warning("critic skipped: %s", exc)
            result.critic_skipped = True

    # --- surfaced-finding acceptance -----------------------------------------------------

    def accept_finding(self, finding_id: str, seed: int = 0) -> EditCycleResult:
        """Apply one surfaced critic fix (the confirm path when fixes are not
        auto-accepted)."""
        pending = self.store.load_pending_findings()
        if finding_id not in pending:
            raise UngroundedReference(f"finding {finding_id}")
        finding = pending.pop(finding_id)
        started = time.monotonic()
        with self.store.lock():
            state, history = self.store.load()
            new_state, diff = apply_batch(state, finding.proposed_fix)
            dirty = compute_dirty_set(state, new_state, diff)
            nonce = history.next_id()
            did_text = self._generate_text(new_state, dirty.text_pages, nonce)
            did_images = self._generate_images(new_state, dirty.image_pages, seed, nonce)
            rev = history.commit(
                new_state,
                diff,
                DirtySet(did_images, did_text, dirty.identity_prompt_dirty),
                origin="critic",
                note=f"accepted finding {finding_id}: {finding.detail}",
                elapsed_seconds=time.monotonic() - started,
            )
            self.store.write(new_state, history)
            self.store.write_pending_findings(list(pending.values()))
        return EditCycleResult(
            revision=rev.id,
            user_revision=rev.id,
            regenerated_image_pages=did_images,
            regenerated_text_pages=did_text,
        )

    # --- retry and revert ------------------------------------------------------------------

    def retry_page(self, page_id: str, seed: int = 0) -> EditCycleResult:
        """Regenerate the failed asset kinds of one page."""
        started = time.monotonic()
        with self.store.lock():
            state, history = self.store.load()
            page = state.page_by_id(page_id)
            kinds = set(page.failures)
            if not kinds:
                return EditCycleResult(
                    revision=history.head.id if history.head else "",
                    user_revision=history.head.id if history.head else "",
                )
            new_state = state.clone()
            nonce = history.next_id()
            did_text = (
                self._generate_text(new_state, {page_id}, nonce)
                if "narration_text" in kinds
                else set()
            )
            did_images = (
                self._generate_images(new_state, {page_id}, seed, nonce)
                if "page_image" in kinds
                else set()
            )
            rev = history.commit(
                new_state,
                diff_states(state, new_state),
                DirtySet(did_images, did_text, False),
                origin="user",
                note=f"retry page {page_id}",
                elapsed_seconds=time.monotonic() - started,
            )
            self.store.write(new_state, history)
        return EditCycleResult(
            revision=rev.id,
            user_revision=rev.id,
            regenerated_image_pages=did_images,
            regenerated_text_pages=did_text,
        )

    def revert(self, revision_id: str):
        """Restore an earlier snapshot; assets come back from the blob store."""
        with self.store.lock():
            state, history = self.store.load()
            restored = history_revert(history, revision_id)
            self.store.write(restored, history)
            self.store.write_pending_findings([])
            return restored, history.head
