import random

import pytest

from storystate.edits import (
    AddCharacterToPage,
    AddIdentityInvariant,
    AddPage,
    EditBatch,
    History,
    MovePage,
    RemovePage,
    SetCharacterAttribute,
    SetNarrativePhase,
    SetPageConstraint,
    SetSceneDescription,
    SetWorldField,
    apply_batch,
    compute_dirty_set,
    diff_states,
    oracle_dirty_set,
    revert,
)
from storystate.errors import EditRejected, UnknownRevision
from storystate.model import IdentityInvariant, canonical_json, validate
from support import lily_story, make_character, make_page, random_applying_batch, random_state


class TestApplyBatch:
    def test_page_constraint_edit_localizes_diff(self, lily):
        batch = EditBatch(
            ops=[SetPageConstraint("p3", "coat", "same yellow coat as on page 1")]
        )
        new_state, diff = apply_batch(lily, batch)
        assert set(diff.changed_page_ids) == {"p3"}
        assert not diff.changed_character_ids and not diff.changed_world_fields
        # Unrelated pages serialize identically.
        for page in lily.pages:
            if page.id != "p3":
                assert new_state.page_by_id(page.id) == page

    def test_cancelling_ops_give_empty_diff(self, lily):
        batch = EditBatch(ops=[SetCharacterAttribute("c1", "hair", "red curls")])
        _, diff = apply_batch(lily, batch)
        assert diff.is_empty()

    def test_rejected_op_leaves_state_untouched(self, lily):
        before = canonical_json(lily)
        batch = EditBatch(
            ops=[
                SetSceneDescription("p1", "changed"),
                SetCharacterAttribute("c99", "hair", "none"),
            ]
        )
        with pytest.raises(EditRejected) as exc:
            apply_batch(lily, batch)
        assert exc.value.op_index == 1
        assert canonical_json(lily) == before

    def test_empty_batch_rejected(self, lily):
        with pytest.raises(EditRejected):
            apply_batch(lily, EditBatch(ops=[]))

    def test_invalid_net_state_rejected(self, lily):
        # Phases must stay monotone across ordinals.
        batch = EditBatch(ops=[SetNarrativePhase("p1", "resolve")])
        with pytest.raises(EditRejected):
            apply_batch(lily, batch)

    def test_remove_character_cascades(self, lily):
        from storystate.edits import RemoveCharacter

        new_state, diff = apply_batch(lily, EditBatch(ops=[RemoveCharacter("c1")]))
        assert validate(new_state) == []
        assert all("c1" not in p.characters for p in new_state.pages)
        assert all(i.character != "c1" for i in new_state.invariants_list)
        assert {"p1", "p3", "p5"} <= set(diff.changed_page_ids)

    def test_add_page_shifts_ordinals(self, lily):
        page = make_page("", 0, "a brand new scene", [], "introduce")
        new_state, diff = apply_batch(lily, EditBatch(ops=[AddPage(1, page)]))
        assert [p.ordinal for p in new_state.pages_in_order()] == list(range(1, 12))
        assert new_state.page_by_ordinal(2).scene_description == "a brand new scene"
        assert new_state.page_by_ordinal(3).id == "p2"
        assert diff.pages_added == {"p11"}

    def test_move_page_preserves_relative_order(self, lily):
        new_state, diff = apply_batch(lily, EditBatch(ops=[MovePage("p5", 3)]))
        ids = [p.id for p in new_state.pages_in_order()]
        assert ids == ["p1", "p2", "p5", "p3", "p4", "p6", "p7", "p8", "p9", "p10"]
        assert diff.pages_moved == {"p3", "p4", "p5"}

    def test_move_breaking_phase_order_rejected(self, lily):
        with pytest.raises(EditRejected):
            apply_batch(lily, EditBatch(ops=[MovePage("p7", 3)]))

    def test_remove_page_closes_gap(self, lily):
        new_state, _ = apply_batch(lily, EditBatch(ops=[RemovePage("p5")]))
        assert [p.ordinal for p in new_state.pages_in_order()] == list(range(1, 10))
        assert validate(new_state) == []

    def test_page_id_not_reused_after_removal(self, lily):
        state, _ = apply_batch(lily, EditBatch(ops=[RemovePage("p10")]))
        page = make_page("", 0, "replacement", [], "resolve")
        state, _ = apply_batch(state, EditBatch(ops=[AddPage(9, page)]))
        assert state.pages_in_order()[-1].id == "p11"


class TestDirtyRules:
    def test_single_page_constraint_dirties_that_page_only(self, lily):
        batch = EditBatch(ops=[SetPageConstraint("p3", "coat", "same yellow coat as on page 1")])
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {"p3"}
        assert dirty.text_pages == set()
        assert not dirty.identity_prompt_dirty

    def test_global_attribute_edit_dirties_referencing_pages(self, lily):
        batch = EditBatch(ops=[SetCharacterAttribute("c1", "eyes", "green")])
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {"p1", "p3", "p5"}
        assert dirty.identity_prompt_dirty
        assert dirty.text_pages == set()

    def test_world_style_change_dirties_all_pages(self, lily):
        batch = EditBatch(ops=[SetWorldField("style", "charcoal sketch")])
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {p.id for p in lily.pages}
        assert dirty.identity_prompt_dirty

    def test_empty_diff_empty_dirty(self, lily):
        batch = EditBatch(ops=[SetCharacterAttribute("c1", "hair", "red curls")])
        new_state, diff = apply_batch(lily, batch)
        assert compute_dirty_set(lily, new_state, diff).is_empty()

    def test_invariant_on_unplaced_character(self, lily):
        lily.characters.append(make_character("c3", "Mo"))
        batch = EditBatch(
            ops=[AddIdentityInvariant(IdentityInvariant("c3", "always hums"))]
        )
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.identity_prompt_dirty and dirty.image_pages == set()
        oracle = oracle_dirty_set(lily, new_state)
        assert oracle.identity_prompt_dirty and oracle.image_pages == set()

    def test_inactive_invariant_change_is_invisible(self, lily):
        batch = EditBatch(
            ops=[AddIdentityInvariant(IdentityInvariant("c1", "naps at noon", active=False))]
        )
        new_state, diff = apply_batch(lily, batch)
        assert compute_dirty_set(lily, new_state, diff).is_empty()
        assert oracle_dirty_set(lily, new_state).is_empty()

    def test_scene_change_dirties_text_and_image(self, lily):
        batch = EditBatch(ops=[SetSceneDescription("p2", "a rainy rooftop chase")])
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {"p2"} and dirty.text_pages == {"p2"}

    def test_membership_change_dirties_text(self, lily):
        batch = EditBatch(ops=[AddCharacterToPage("p4", "c2")])
        new_state, diff = apply_batch(lily, batch)
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {"p4"} and dirty.text_pages == {"p4"}

    def test_pure_move_dirties_nothing(self, lily):
        batch = EditBatch(ops=[MovePage("p4", 5)])
        new_state, diff = apply_batch(lily, batch)
        assert compute_dirty_set(lily, new_state, diff).is_empty()
        assert oracle_dirty_set(lily, new_state).is_empty()


class TestOracle:
    def test_oracle_on_page_edit(self, lily):
        new_state, _ = apply_batch(
            lily, EditBatch(ops=[SetPageConstraint("p3", "tv_position", "TV on the left")])
        )
        oracle = oracle_dirty_set(lily, new_state)
        assert oracle.image_pages == {"p3"}
        assert not oracle.identity_prompt_dirty

    def test_oracle_noop(self, lily):
        assert oracle_dirty_set(lily, lily.clone()).is_empty()

    def test_oracle_world_style(self, lily):
        new_state, _ = apply_batch(lily, EditBatch(ops=[SetWorldField("style", "linocut print")]))
        assert oracle_dirty_set(lily, new_state).image_pages == {p.id for p in lily.pages}

    def test_rule_path_equals_oracle_randomized(self):
        rng = random.Random(20240801)
        mismatches = 0
        for _ in range(250):
            state = random_state(rng, max_pages=12, max_chars=6)
            batch, new_state, diff = random_applying_batch(rng, state)
            fast = compute_dirty_set(state, new_state, diff)
            slow = oracle_dirty_set(state, new_state)
            if fast.image_pages != slow.image_pages:
                mismatches += 1
                print("MISMATCH", batch.to_dict(), fast.to_dict(), slow.to_dict())
            assert fast.text_pages == slow.text_pages
            assert fast.identity_prompt_dirty == slow.identity_prompt_dirty
        assert mismatches == 0


class TestLocality:
    def test_page_local_batch_dirties_exactly_that_page(self, lily):
        ops = [
            SetSceneDescription("p6", "Tom repairs the lighthouse lamp"),
            SetPageConstraint("p6", "lamp", "brass lamp glowing"),
            SetNarrativePhase("p6", "develop"),
        ]
        new_state, diff = apply_batch(lily, EditBatch(ops=ops))
        dirty = compute_dirty_set(lily, new_state, diff)
        assert dirty.image_pages == {"p6"}


class TestHistoryRevert:
    def _history_with_edit(self, lily):
        from storystate.edits import DirtySet, StateDiff

        history = History()
        history.commit(lily, StateDiff(), DirtySet(), origin="planner", note="created")
        batch = EditBatch(ops=[SetSceneDescription("p1", "new opening")])
        new_state, diff = apply_batch(lily, batch)
        history.commit(new_state, diff, compute_dirty_set(lily, new_state, diff), origin="user")
        return history, new_state

    def test_apply_then_revert_restores_snapshot(self, lily):
        history, _ = self._history_with_edit(lily)
        restored = revert(history, "r0")
        assert canonical_json(restored) == canonical_json(lily)
        assert len(history.revisions) == 3
        assert history.head.note == "revert to r0"

    def test_revert_to_head_adds_revision_without_change(self, lily):
        history, new_state = self._history_with_edit(lily)
        restored = revert(history, history.revisions[-1].id)
        assert canonical_json(restored) == canonical_json(new_state)
        assert len(history.revisions) == 3
        assert history.head.diff.is_empty()

    def test_revert_unknown_revision(self, lily):
        history, _ = self._history_with_edit(lily)
        with pytest.raises(UnknownRevision):
            revert(history, "bogus")

    def test_revision_round_trip(self, lily):
        from storystate.edits import Revision

        history, _ = self._history_with_edit(lily)
        rev = history.head
        again = Revision.from_dict(rev.to_dict())
        assert again.to_dict() == rev.to_dict()


class TestDiffIsEmptyIffEqual:
    def test_randomized(self):
        rng = random.Random(99)
        for _ in range(120):
            state = random_state(rng, max_pages=8, max_chars=4)
            _, new_state, diff = random_applying_batch(rng, state)
            assert diff.is_empty() == (state.to_dict() == new_state.to_dict())
            assert diff_states(state, state.clone()).is_empty()


class TestValidityPreservation:
    def test_sequences_of_applying_batches_keep_states_valid(self):
        rng = random.Random(4242)
        for _ in range(20):
            state = random_state(rng, max_pages=6, max_chars=4)
            for _ in range(5):
                _, state, _ = random_applying_batch(rng, state)
                assert validate(state) == []
