"""Builders and randomized generators shared across the test suite.

The random generators are seeded (callers pass a ``random.Random``) so every
corpus is reproducible. Generated names, attribute values, and constraint
descriptions carry a global counter suffix, keeping renders distinct between
distinct entities; that mirrors real sheets, where two characters do not share
an identical identity clause.
"""

from __future__ import annotations

import itertools
import random

from storystate.edits import (
    AddCharacter,
    AddCharacterToPage,
    AddIdentityInvariant,
    AddPage,
    EditBatch,
    EditOp,
    MovePage,
    RemoveCharacter,
    RemoveCharacterFromPage,
    RemoveIdentityInvariant,
    RemovePage,
    RemovePageConstraint,
    SetCharacterAttribute,
    SetNarrativePhase,
    SetPageConstraint,
    SetSceneDescription,
    SetWorldField,
    apply_batch,
)
from storystate.errors import EditRejected
from storystate.model import (
    PHASES,
    CharacterEntry,
    IdentityInvariant,
    PageState,
    StoryState,
    VisualConstraint,
    WorldSettings,
    validate,
)

NOUNS = [
    "fox", "robot", "sailor", "wizard", "dragon", "owl", "badger", "astronaut",
    "painter", "turtle", "knight", "librarian",
]
ADJS = [
    "curious", "gentle", "grumpy", "shiny", "tiny", "brave", "sleepy", "swift",
]
STYLES = [
    "watercolor illustration", "ink sketch", "pastel drawing", "oil painting",
    "paper-cut collage", "pixel art scene",
]
TONES = ["", "warm", "melancholy", "playful", ""]
PLACES = ["harbor", "old library", "rooftop garden", "night market", "pine forest"]
ACTIONS = [
    "waking at dawn", "crossing the bridge", "reading an old map", "sharing a meal",
    "fixing the lantern", "watching the rain", "climbing the tower", "finding a key",
]

_counter = itertools.count(1)


def fresh_token(prefix: str) -> str:
    return f"{prefix}{next(_counter)}"


def make_character(
    cid: str,
    name: str,
    attributes: dict[str, str] | None = None,
    aliases: list[str] | None = None,
    role: str = "",
) -> CharacterEntry:
    return CharacterEntry(
        id=cid,
        name=name,
        role=role,
        attributes=dict(attributes or {}),
        aliases=list(aliases or []),
    )


def make_page(
    pid: str,
    ordinal: int,
    scene: str,
    characters: list[str] | None = None,
    phase: str = "introduce",
    constraints: list[tuple[str, str]] | None = None,
) -> PageState:
    return PageState(
        id=pid,
        ordinal=ordinal,
        scene_description=scene,
        characters=list(characters or []),
        constraints=[VisualConstraint(key=k, description=d) for k, d in (constraints or [])],
        narrative_phase=phase,
    )


def monotone_phases(rng: random.Random, n: int) -> list[str]:
    a = rng.randint(0, n)
    b = rng.randint(a, n)
    return ["introduce"] * a + ["develop"] * (b - a) + ["resolve"] * (n - b)


def lily_story(n_pages: int = 10) -> StoryState:
    """A hand-built two-character story used by the localized-edit scenarios.

    Lily appears on pages 1, 3, and 5; Tom on pages 2 and 6.
    """
    lily = make_character("c1", "Lily", {"hair": "red curls"}, aliases=["the girl"])
    tom = make_character("c2", "Tom", {"coat": "blue duffel coat"})
    pages = []
    lily_pages = {1, 3, 5}
    tom_pages = {2, 6}
    phases = ["introduce", "introduce"] + ["develop"] * 4 + ["resolve"] * (n_pages - 6)
    for i in range(1, n_pages + 1):
        chars = []
        if i in lily_pages:
            chars.append("c1")
        if i in tom_pages:
            chars.append("c2")
        pages.append(
            make_page(
                f"p{i}",
                i,
                f"scene {i} at the {PLACES[i % len(PLACES)]}",
                chars,
                phases[min(i - 1, len(phases) - 1)],
            )
        )
    state = StoryState(
        id="story-lily",
        title="Lily and the lost kite",
        characters=[lily, tom],
        invariants_list=[IdentityInvariant("c1", "always wears a yellow raincoat")],
        world=WorldSettings(style="watercolor illustration", tone="warm"),
        pages=pages,
        id_seq={"page": n_pages, "character": 2},
    )
    assert validate(state) == []
    return state


def random_state(rng: random.Random, max_pages: int = 12, max_chars: int = 6) -> StoryState:
    n_chars = rng.randint(1, max_chars)
    characters = []
    for i in range(1, n_chars + 1):
        name = f"{rng.choice(ADJS)} {rng.choice(NOUNS)} {fresh_token('n')}"
        attrs = {}
        for j in range(rng.randint(0, 3)):
            attrs[f"trait{j}"] = f"{rng.choice(ADJS)} {fresh_token('v')}"
        aliases = [f"the {fresh_token('alias')}"] if rng.random() < 0.3 else []
        characters.append(make_character(f"c{i}", name, attrs, aliases))

    invariants = []
    for _ in range(rng.randint(0, 3)):
        invariants.append(
            IdentityInvariant(
                character=rng.choice(characters).id,
                constraint_text=f"always carries {fresh_token('inv')}",
                active=rng.random() < 0.7,
            )
        )

    world = WorldSettings(
        style=f"{rng.choice(STYLES)} {fresh_token('s')}",
        tone=rng.choice(TONES),
        recurring_locations=rng.sample(PLACES, rng.randint(0, 2)),
        recurring_props=[f"prop {fresh_token('w')}"] if rng.random() < 0.4 else [],
    )

    n_pages = rng.randint(1, max_pages)
    phases = monotone_phases(rng, n_pages)
    pages = []
    for i in range(1, n_pages + 1):
        on_page = [c.id for c in characters if rng.random() < 0.4]
        scene = f"{rng.choice(ACTIONS)} near the {rng.choice(PLACES)} {fresh_token('sc')}"
        if on_page and rng.random() < 0.5:
            scene = f"{rng.choice([c for c in characters if c.id in on_page]).name}, {scene}"
        constraints = [
            (f"slot{k}", f"{rng.choice(ADJS)} detail {fresh_token('d')}")
            for k in range(rng.randint(0, 3))
        ]
        pages.append(make_page(f"p{i}", i, scene, on_page, phases[i - 1], constraints))

    state = StoryState(
        id=f"story-{fresh_token('id')}",
        title=f"Tale {fresh_token('t')}",
        characters=characters,
        invariants_list=invariants,
        world=world,
        pages=pages,
        prompt_suffix="rendered in a consistent palette" if rng.random() < 0.3 else "",
        id_seq={"page": n_pages, "character": n_chars},
    )
    assert validate(state) == [], validate(state)
    return state


def random_op(rng: random.Random, state: StoryState) -> EditOp:
    """One random op referencing the given state (references may still fail to apply)."""
    choices = ["set_attr", "set_scene", "set_constraint", "remove_constraint",
               "add_char_page", "remove_char_page", "set_world", "add_invariant",
               "remove_invariant", "add_character", "remove_character",
               "add_page", "remove_page", "move_page", "set_phase"]
    weights = [4, 4, 4, 2, 3, 2, 3, 3, 1, 1, 1, 2, 1, 2, 2]
    kind = rng.choices(choices, weights=weights, k=1)[0]
    chars = state.characters
    pages = state.pages_in_order()

    if kind == "set_attr" and chars:
        c = rng.choice(chars)
        key = rng.choice(list(c.attributes) + [f"trait{rng.randint(0, 4)}"])
        return SetCharacterAttribute(c.id, key, f"{rng.choice(ADJS)} {fresh_token('v')}")
    if kind == "set_scene" and pages:
        p = rng.choice(pages)
        return SetSceneDescription(p.id, f"{rng.choice(ACTIONS)} {fresh_token('sc')}")
    if kind == "set_constraint" and pages:
        p = rng.choice(pages)
        key = rng.choice([c.key for c in p.constraints] + [f"slot{rng.randint(0, 4)}"])
        return SetPageConstraint(p.id, key, f"{rng.choice(ADJS)} detail {fresh_token('d')}")
    if kind == "remove_constraint" and pages:
        p = rng.choice(pages)
        keys = [c.key for c in p.constraints]
        return RemovePageConstraint(p.id, rng.choice(keys) if keys else "slot0")
    if kind == "add_char_page" and pages and chars:
        return AddCharacterToPage(rng.choice(pages).id, rng.choice(chars).id)
    if kind == "remove_char_page" and pages:
        p = rng.choice(pages)
        cid = rng.choice(p.characters) if p.characters else (chars[0].id if chars else "c1")
        return RemoveCharacterFromPage(p.id, cid)
    if kind == "set_world":
        f = rng.choice(list(WorldSettings.WORLD_FIELDS))
        if f in ("recurring_locations", "recurring_props"):
            return SetWorldField(f, rng.sample(PLACES, rng.randint(0, 2)))
        if f == "style":
            return SetWorldField(f, f"{rng.choice(STYLES)} {fresh_token('s')}")
        return SetWorldField(f, rng.choice(TONES))
    if kind == "add_invariant" and chars:
        return AddIdentityInvariant(
            IdentityInvariant(
                character=rng.choice(chars).id,
                constraint_text=f"always carries {fresh_token('inv')}",
                active=rng.random() < 0.7,
            )
        )
    if kind == "remove_invariant":
        if state.invariants_list:
            inv = rng.choice(state.invariants_list)
            return RemoveIdentityInvariant(inv.character, inv.constraint_text)
        return RemoveIdentityInvariant("c1", "nothing")
    if kind == "add_character":
        return AddCharacter(
            make_character("", f"{rng.choice(ADJS)} {rng.choice(NOUNS)} {fresh_token('n')}")
        )
    if kind == "remove_character" and chars:
        return RemoveCharacter(rng.choice(chars).id)
    if kind == "add_page":
        phase = rng.choice(PHASES)
        page = make_page("", 0, f"{rng.choice(ACTIONS)} {fresh_token('sc')}",
                         [c.id for c in chars if rng.random() < 0.3], phase)
        return AddPage(rng.randint(0, len(pages)), page)
    if kind == "remove_page" and pages:
        return RemovePage(rng.choice(pages).id)
    if kind == "move_page" and pages:
        return MovePage(rng.choice(pages).id, rng.randint(1, len(pages)))
    if kind == "set_phase" and pages:
        return SetNarrativePhase(rng.choice(pages).id, rng.choice(PHASES))
    # Fallback when the state lacks what the drawn kind needs.
    return SetWorldField("tone", rng.choice(TONES))


def random_applying_batch(
    rng: random.Random, state: StoryState, max_ops: int = 3, max_tries: int = 50
) -> tuple[EditBatch, StoryState, object]:
    """Draw batches until one applies cleanly; returns (batch, new_state, diff)."""
    for _ in range(max_tries):
        ops = [random_op(rng, state) for _ in range(rng.randint(1, max_ops))]
        batch = EditBatch(ops=ops, origin="user")
        try:
            new_state, diff = apply_batch(state, batch)
        except EditRejected:
            continue
        return batch, new_state, diff
    raise AssertionError("could not draw an applying batch in 50 tries")
