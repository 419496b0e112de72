import json

import pytest

from storystate.agents import (
    PageAssets,
    build_state,
    critique,
    default_phase_split,
    parse_edit_request,
    plan,
)
from storystate.backends import MockChatBackend
from storystate.edits import SetCharacterAttribute, SetPageConstraint
from storystate.errors import MalformedAgentOutput, UngroundedReference
from storystate.model import validate


class TestPlan:
    def test_ten_pages_with_default_split(self):
        out = plan(MockChatBackend(), "a shy boy finds a lost robot in the city", 10)
        assert len(out.pages) == 10
        phases = [p.narrative_phase for p in out.pages]
        assert phases == ["introduce"] * 2 + ["develop"] * 4 + ["resolve"] * 4

    def test_single_page_is_introduce(self):
        out = plan(MockChatBackend(), "a tiny adventure", 1)
        assert len(out.pages) == 1
        assert out.pages[0].narrative_phase == "introduce"

    def test_mock_plan_is_byte_stable(self):
        a = plan(MockChatBackend(), "a shy boy finds a lost robot in the city", 10)
        b = plan(MockChatBackend(), "a shy boy finds a lost robot in the city", 10)
        assert json.dumps([p.__dict__ for p in a.pages]) == json.dumps(
            [p.__dict__ for p in b.pages]
        )

    def test_schema_violation_retried_then_raised(self):
        backend = MockChatBackend(script={"planner_output": {"pages": []}})
        with pytest.raises(MalformedAgentOutput) as exc:
            plan(backend, "anything", 3)
        assert backend.call_counts["planner_output"] == 3  # initial + 2 retries
        assert exc.value.raw_text

    def test_retry_can_recover(self):
        good = MockChatBackend()._default_planner_output(
            {"prompt": "x", "n_pages": 2, "phases": ["introduce", "resolve"]}
        )
        backend = MockChatBackend(script={"planner_output": [{"pages": []}, good]})
        out = plan(backend, "x", 2)
        assert len(out.pages) == 2

    def test_phase_split_edges(self):
        assert default_phase_split(1) == ["introduce"]
        assert default_phase_split(2) == ["introduce", "resolve"]
        assert default_phase_split(10).count("introduce") == 2
        assert default_phase_split(10).count("resolve") == 4


class TestBuildState:
    def test_coreference_unifies_surfaces(self):
        planner = plan(MockChatBackend(), "a boy and his days", 3)
        planner.character_candidates[0].surface = "a boy"
        planner.pages[0].character_surfaces = ["a boy"]
        planner.pages[1].character_surfaces = ["Tim"]
        planner.pages[2].character_surfaces = ["the child"]
        backend = MockChatBackend(
            script={
                "coref_clusters": {
                    "clusters": [
                        {"canonical": "Tim", "members": ["a boy", "Tim", "the child"]}
                    ]
                }
            }
        )
        state = build_state(planner, backend, story_id="s1")
        assert len(state.characters) == 1
        entry = state.characters[0]
        assert entry.name == "Tim"
        assert sorted(entry.aliases) == ["a boy", "the child"]
        assert validate(state) == []
        assert all(p.characters == [entry.id] for p in state.pages)

    def test_single_surface_skips_coref_call(self):
        planner = plan(MockChatBackend(), "solo journey", 4)
        backend = MockChatBackend()
        state = build_state(planner, backend, story_id="s2")
        assert len(state.characters) == 1
        assert "coref_clusters" not in backend.call_counts
        assert state.world.style == "storybook illustration"

    def test_two_distinct_characters_no_aliases(self):
        planner = plan(MockChatBackend(), "two friends", 2)
        planner.character_candidates[0].surface = "Ana"
        planner.character_candidates.append(type(planner.character_candidates[0])("Bo"))
        planner.pages[0].character_surfaces = ["Ana"]
        planner.pages[1].character_surfaces = ["Bo"]
        state = build_state(planner, MockChatBackend(), story_id="s3")
        assert [c.name for c in state.characters] == ["Ana", "Bo"]
        assert all(c.aliases == [] for c in state.characters)

    def test_uncovered_surface_is_malformed(self):
        planner = plan(MockChatBackend(), "x", 2)
        planner.pages[1].character_surfaces = ["Stranger"]
        backend = MockChatBackend(
            script={"coref_clusters": {"clusters": [{"canonical": "Hero", "members": ["Hero"]}]}}
        )
        with pytest.raises(MalformedAgentOutput):
            build_state(planner, backend, story_id="s4")


class TestParseEditRequest:
    def test_page_scoped_request_yields_two_constraints(self, lily):
        request = (
            "on page 3, Lily should wear the same yellow coat as on page 1, "
            "and the TV should be on the left"
        )
        batch = parse_edit_request(MockChatBackend(), lily, request)
        assert len(batch.ops) == 2
        assert all(isinstance(op, SetPageConstraint) for op in batch.ops)
        assert all(op.page == "p3" for op in batch.ops)
        coat, tv = batch.ops
        assert coat.key == "coat"
        assert coat.description == "same yellow coat as on page 1"
        assert tv.key == "tv_position"
        assert tv.description == "TV on the left"
        assert batch.note == request

    def test_global_attribute_request(self, lily):
        batch = parse_edit_request(
            MockChatBackend(), lily, "Lily has green eyes throughout the story"
        )
        assert len(batch.ops) == 1
        op = batch.ops[0]
        assert isinstance(op, SetCharacterAttribute)
        assert op.character == "c1"
        assert op.key == "eyes"
        assert op.value == "green"

    def test_alias_grounding(self, lily):
        batch = parse_edit_request(
            MockChatBackend(), lily, "the girl has silver eyes throughout the story"
        )
        assert batch.ops[0].character == "c1"

    def test_unknown_name_raises_ungrounded(self, lily):
        with pytest.raises(UngroundedReference) as exc:
            parse_edit_request(
                MockChatBackend(), lily, "Bob has green eyes throughout the story"
            )
        assert exc.value.surface == "Bob"

    def test_unparseable_request_is_malformed(self, lily):
        with pytest.raises(MalformedAgentOutput):
            parse_edit_request(MockChatBackend(), lily, "please make it nicer somehow")

    def test_unknown_page_ordinal_ungrounded(self, lily):
        with pytest.raises(UngroundedReference):
            parse_edit_request(
                MockChatBackend(), lily, "on page 42, Lily should wear the red scarf"
            )

    def test_parse_is_deterministic(self, lily):
        request = "on page 3, Lily should wear the same yellow coat as on page 1"
        a = parse_edit_request(MockChatBackend(), lily, request)
        b = parse_edit_request(MockChatBackend(), lily, request)
        assert a.to_dict() == b.to_dict()


class TestCritique:
    def test_consistent_page_passes(self, lily):
        report = critique(MockChatBackend(), lily, "p1", PageAssets(narration_text="n"))
        assert report.passed and report.findings == []

    def test_planted_mismatch_yields_fix(self, lily):
        backend = MockChatBackend(
            script={
                "critic_report": {
                    "pass": False,
                    "findings": [
                        {
                            "kind": "attribute_mismatch",
                            "detail": "coat is red, sheet says yellow",
                            "fix_ops": [
                                {
                                    "op": "set_page_constraint",
                                    "page": "p1",
                                    "key": "coat",
                                    "description": "yellow raincoat as on the sheet",
                                }
                            ],
                        }
                    ],
                }
            }
        )
        report = critique(backend, lily, "p1", PageAssets(narration_text="n"))
        assert not report.passed
        assert len(report.findings) == 1
        finding = report.findings[0]
        assert finding.kind == "attribute_mismatch"
        assert finding.proposed_fix.origin == "critic"
        assert finding.proposed_fix.ops[0].page == "p1"
        assert finding.finding_id

    def test_fix_targeting_other_page_rejected(self, lily):
        backend = MockChatBackend(
            script={
                "critic_report": {
                    "pass": False,
                    "findings": [
                        {
                            "kind": "layout_violation",
                            "detail": "wrong page touched",
                            "fix_ops": [
                                {"op": "set_scene_description", "page": "p9", "text": "x"}
                            ],
                        }
                    ],
                }
            }
        )
        with pytest.raises(MalformedAgentOutput):
            critique(backend, lily, "p1", PageAssets())

    def test_fix_referencing_missing_constraint_rejected(self, lily):
        backend = MockChatBackend(
            script={
                "critic_report": {
                    "pass": False,
                    "findings": [
                        {
                            "kind": "missing_element",
                            "detail": "phantom slot",
                            "fix_ops": [
                                {"op": "remove_page_constraint", "page": "p1", "key": "nope"}
                            ],
                        }
                    ],
                }
            }
        )
        with pytest.raises(MalformedAgentOutput) as exc:
            critique(backend, lily, "p1", PageAssets())
        assert "not applicable" in str(exc.value)

    def test_pass_findings_mismatch_is_malformed(self, lily):
        backend = MockChatBackend(script={"critic_report": {"pass": False, "findings": []}})
        with pytest.raises(MalformedAgentOutput):
            critique(backend, lily, "p1", PageAssets())

    def test_text_only_backend_degrades(self, lily):
        backend = MockChatBackend()
        backend.supports_images = False
        report = critique(backend, lily, "p1", PageAssets(image_bytes=b"png", image_hash="h"))
        assert report.degraded
        sent = json.loads(backend.calls[-1].user_text)
        assert "image_description" in sent
