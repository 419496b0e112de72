import json
import random

import pytest

import storystate.prompts as prompts
from storystate.edits import DirtySet, EditBatch, History, SetSceneDescription, StateDiff, apply_batch
from storystate.errors import LoadError, ParseError, ProjectLocked
from storystate.model import canonical_json
from storystate.persistence import (
    QUALITY_CLAUSE,
    AssetStore,
    DatasetSpec,
    ProjectStore,
    generate_dataset,
    import_dataset,
    shipped_dataset_specs,
)
from storystate.prompts import export_interchange, parse_interchange, parse_interchange_records
from support import lily_story, random_state


def seeded_history(state):
    history = History()
    history.commit(state, StateDiff(), DirtySet(), origin="planner", note="created")
    return history


class TestProjectStore:
    def test_save_load_round_trip(self, tmp_path, lily):
        store = ProjectStore(tmp_path / "proj")
        store.save(lily, seeded_history(lily))
        state, history = store.load()
        assert state == lily
        assert len(history.revisions) == 1
        assert history.head.note == "created"

    def test_randomized_round_trips(self, tmp_path):
        rng = random.Random(17)
        for i in range(15):
            state = random_state(rng, max_pages=6, max_chars=3)
            store = ProjectStore(tmp_path / f"proj{i}")
            store.save(state, seeded_history(state))
            loaded, _ = store.load()
            assert loaded == state
            assert canonical_json(loaded) == canonical_json(state)

    def test_load_empty_dir_is_load_error(self, tmp_path):
        with pytest.raises(LoadError):
            ProjectStore(tmp_path / "nothing").load()

    def test_corrupt_story_json(self, tmp_path, lily):
        store = ProjectStore(tmp_path / "proj")
        store.save(lily, seeded_history(lily))
        store.story_path.write_text("{not json")
        with pytest.raises(LoadError) as exc:
            store.load()
        assert "story.json" in str(exc.value)

    def test_concurrent_save_locked(self, tmp_path, lily):
        store_a = ProjectStore(tmp_path / "proj")
        store_b = ProjectStore(tmp_path / "proj")
        store_a.acquire_lock()
        try:
            with pytest.raises(ProjectLocked):
                store_b.save(lily, seeded_history(lily))
        finally:
            store_a.release_lock()
        store_b.save(lily, seeded_history(lily))

    def test_stale_lock_from_dead_pid_is_stolen(self, tmp_path, lily):
        store = ProjectStore(tmp_path / "proj")
        store.root.mkdir(parents=True)
        store.lock_path.write_text("999999999")
        store.save(lily, seeded_history(lily))
        assert store.exists()

    def test_crash_between_temp_and_rename_preserves_previous(self, tmp_path, lily):
        store = ProjectStore(tmp_path / "proj")
        history = seeded_history(lily)
        store.save(lily, history)
        before = store.story_path.read_text()

        edited, diff = apply_batch(
            lily, EditBatch(ops=[SetSceneDescription("p1", "changed scene")])
        )
        history.commit(edited, diff, DirtySet(), origin="user")

        def boom(path):
            raise RuntimeError("simulated crash")

        store.crash_hook = boom
        with pytest.raises(RuntimeError):
            store.save(edited, history)
        assert store.story_path.read_text() == before
        # Nothing held: the next save succeeds and wins.
        store.crash_hook = None
        store.save(edited, history)
        loaded, _ = store.load()
        assert loaded.page_by_id("p1").scene_description == "changed scene"

    def test_revision_files_are_write_once(self, tmp_path, lily):
        store = ProjectStore(tmp_path / "proj")
        history = seeded_history(lily)
        store.save(lily, history)
        r0 = store.revisions_dir / "r0.json"
        stamp = r0.stat().st_mtime_ns
        store.save(lily, history)
        assert r0.stat().st_mtime_ns == stamp


class TestAssetStore:
    def test_content_addressing_dedupes(self, tmp_path):
        store = AssetStore(tmp_path / "assets")
        a = store.put(b"same bytes", "page_image", "r0")
        b = store.put(b"same bytes", "narration_text", "r1")
        assert a.content_hash == b.content_hash
        assert len(list((tmp_path / "assets").iterdir())) == 1
        assert store.read(a.content_hash) == b"same bytes"

    def test_missing_asset_raises(self, tmp_path):
        store = AssetStore(tmp_path / "assets")
        with pytest.raises(LoadError):
            store.read("0" * 64)


class TestGenerateDataset:
    def test_first_shipped_spec_reproduces_reference_record(self, phoenix_record_text):
        record = generate_dataset(shipped_dataset_specs()[:1])[0]
        assert record == phoenix_record_text + "\n"
        assert parse_interchange(record) == parse_interchange(phoenix_record_text)

    def test_zebra_frame_8(self, zebra_record_text):
        record = generate_dataset(shipped_dataset_specs()[1:2])[0]
        _, frames = parse_interchange(record)
        assert "resting under the shade of an acacia tree" in frames[7]
        assert frames[7].endswith(QUALITY_CLAUSE)
        assert "bringing the scene to a calm resolution" in frames[7]
        assert parse_interchange(zebra_record_text)[1] == frames

    def test_all_192_specs_generate_distinct_parseable_records(self):
        specs = shipped_dataset_specs()
        assert len(specs) == 192
        records = generate_dataset(specs)
        parsed = parse_interchange_records("\n".join(records))
        assert len(parsed) == 192
        id_prompts = [p[0] for p in parsed]
        assert len(set(id_prompts)) == 192

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            generate_dataset([DatasetSpec("a cat", "soft fur", "A sketch", ["one"])])


class TestImportDataset:
    def test_five_records_become_five_ten_page_stories(self, sample_dataset_text):
        stories = import_dataset(sample_dataset_text)
        assert len(stories) == 5
        assert all(len(s.pages) == 10 for s in stories)

    def test_character_parsed_from_with_clause(self, phoenix_record_text):
        story = import_dataset(phoenix_record_text)[0]
        entry = story.characters[0]
        assert entry.name == "phoenix"
        assert entry.attributes == {"appearance": "bright orange feathers"}
        assert story.world.style == "fiery and majestic illustration"
        assert story.prompt_suffix == QUALITY_CLAUSE

    def test_phases_follow_blocks(self, phoenix_record_text):
        story = import_dataset(phoenix_record_text)[0]
        phases = [p.narrative_phase for p in story.pages_in_order()]
        assert phases == ["introduce"] * 2 + ["develop"] * 4 + ["resolve"] * 4

    def test_reexport_is_byte_exact_for_reference_records(self, sample_dataset_text):
        for story, original in zip(
            import_dataset(sample_dataset_text), sample_dataset_text.split("\n\n")
        ):
            bundle = prompts.compile(story)
            exported = export_interchange(bundle)
            assert parse_interchange(exported) == parse_interchange(original)
            assert exported.rstrip("\n") == original.rstrip("\n")

    def test_generate_import_compile_export_fixed_point(self):
        specs = shipped_dataset_specs()[:8]
        records = generate_dataset(specs)
        stories = import_dataset("\n".join(records))
        for story, record in zip(stories, records):
            assert export_interchange(prompts.compile(story)) == record

    def test_malformed_record_index_reported(self, sample_dataset_text):
        # Drop the third record's frame-list token; records 1 and 2 stay intact.
        broken = sample_dataset_text.replace(
            '--id_prompt "A sleek and fast depiction of A cheetah with sharp eyes."\n--frame_prompt_list',
            '--id_prompt "A sleek and fast depiction of A cheetah with sharp eyes."',
        )
        with pytest.raises(ParseError) as exc:
            import_dataset(broken)
        assert exc.value.record == 3

    def test_off_grammar_subject_imports_whole_phrase(self, caplog):
        text = '--id_prompt "A quiet study of The Old Mill."\n--frame_prompt_list\n  "turning slowly, introducing the scene"\n'
        with caplog.at_level("WARNING"):
            stories = import_dataset(text)
        assert stories[0].characters[0].name == "The Old Mill"
        assert "grammar" in caplog.text
