"""Command-line front door: create, edit, revert, export/import, datasets,
metrics, and the HTTP service. Every path runs fully offline with
``--backend mock``.

Results print as JSON with a stable key order; errors go to stderr and map to
stable exit codes (3 invalid request, 4 unknown id/path, 5 locked, 6 backend
failure, 1 anything else). ``--json`` switches stderr to machine-readable
error objects.
"""

from __future__ import annotations

import json
import sys
from functools import wraps
from pathlib import Path

import click

from .backends import (
    BackendConfig,
    HttpEmbeddingBackend,
    MockEmbeddingBackend,
    http_backends,
    mock_backends,
)
from .config import ServiceConfig
from .edits import EditBatch
from .errors import StoryStateError
from .orchestrator import Engine, EngineMode
from .persistence import (
    DatasetSpec,
    ProjectStore,
    generate_dataset,
    import_dataset,
    load_dataset_specs,
    shipped_dataset_specs,
)
from .prompts import compile as compile_prompts
from .prompts import export_interchange

EXIT_BY_CODE = {
    "edit_rejected": 3,
    "ungrounded_reference": 3,
    "ambiguous_alias": 3,
    "empty_story": 3,
    "too_few_pages": 3,
    "no_edits": 3,
    "degenerate_embedding": 3,
    "parse_error": 3,
    "unknown_character": 4,
    "unknown_page": 4,
    "unknown_revision": 4,
    "unknown_story": 4,
    "load_error": 4,
    "missing_asset": 4,
    "project_locked": 5,
    "backend_error": 6,
    "malformed_agent_output": 6,
}


def _emit(data: dict) -> None:
    click.echo(json.dumps(data, ensure_ascii=False, indent=2))


def _handle_errors(fn):
    @wraps(fn)
    @click.pass_context
    def wrapper(ctx, *args, **kwargs):
        try:
            return ctx.invoke(fn, *args, **kwargs)
        except StoryStateError as exc:
            if ctx.obj and ctx.obj.get("json"):
                click.echo(json.dumps({"error": exc.payload()}), err=True)
            else:
                click.echo(f"error [{exc.code}]: {exc}", err=True)
            sys.exit(EXIT_BY_CODE.get(exc.code, 1))

    return wrapper


def _engine(project_dir: str, backend: str) -> Engine:
    backends = http_backends() if backend == "http" else mock_backends()
    return Engine(backends, ProjectStore(project_dir))


@click.group()
@click.option("--json", "json_errors", is_flag=True, help="machine-readable errors on stderr")
@click.pass_context
def main(ctx, json_errors):
    """State-driven storybook engine."""
    ctx.obj = {"json": json_errors}


@main.command()
@click.argument("prompt")
@click.option("--pages", "n_pages", default=10, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--backend", default="mock", type=click.Choice(["mock", "http"]), show_default=True)
@_handle_errors
def new(prompt, n_pages, out_dir, seed, backend):
    """Create a story project from a prompt."""
    engine = _engine(out_dir, backend)
    state, revision, assets = engine.create_story(prompt, n_pages, seed=seed)
    _emit(
        {
            "story_id": state.id,
            "title": state.title,
            "revision": revision.id,
            "pages": len(state.pages),
            "assets": len(assets),
            "out": str(out_dir),
        }
    )


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--text", "request_text", default=None, help="free-text edit request")
@click.option("--ops", "ops_file", default=None, type=click.Path(exists=True), help="ops JSON file")
@click.option(
    "--mode",
    default="full",
    type=click.Choice(list(EngineMode.NAMES)),
    show_default=True,
)
@click.option("--seed", default=0, show_default=True)
@click.option("--backend", default="mock", type=click.Choice(["mock", "http"]), show_default=True)
@click.option("--auto-accept-critic", is_flag=True, help="apply critic fixes without confirmation")
@_handle_errors
def edit(project_dir, request_text, ops_file, mode, seed, backend, auto_accept_critic):
    """Run one edit cycle (free text or structured ops)."""
    if bool(request_text) == bool(ops_file):
        raise click.UsageError("exactly one of --text or --ops is required")
    engine = _engine(project_dir, backend)
    engine_mode = EngineMode.named(mode)
    engine_mode.auto_accept_critic = auto_accept_critic or engine_mode.auto_accept_critic
    if ops_file:
        doc = json.loads(Path(ops_file).read_text(encoding="utf-8"))
        raw_ops = doc["ops"] if isinstance(doc, dict) else doc
        from .agents import ground_ops

        state, _ = engine.store.load()
        note = doc.get("note", "") if isinstance(doc, dict) else ""
        request: str | EditBatch = EditBatch(
            ops=ground_ops(state, raw_ops), origin="user", note=note
        )
    else:
        request = request_text
    result = engine.run_edit_cycle(request, engine_mode, seed=seed)
    _emit(result.to_dict())


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--to", "revision", required=True)
@_handle_errors
def revert(project_dir, revision):
    """Restore an earlier revision snapshot."""
    engine = _engine(project_dir, "mock")
    _, head = engine.revert(revision)
    _emit({"head_revision": head.id, "reverted_to": revision})


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--page", "page_id", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--backend", default="mock", type=click.Choice(["mock", "http"]), show_default=True)
@_handle_errors
def retry(project_dir, page_id, seed, backend):
    """Regenerate the failed assets of one page."""
    result = _engine(project_dir, backend).retry_page(page_id, seed=seed)
    _emit(result.to_dict())


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "interchange"]))
@_handle_errors
def prompts(project_dir, fmt):
    """Print the compiled prompt bundle."""
    state, _ = ProjectStore(project_dir).load()
    bundle = compile_prompts(state)
    if fmt == "interchange":
        click.echo(export_interchange(bundle), nl=False)
    else:
        _emit(bundle.to_dict())


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--format", "fmt", default="interchange", type=click.Choice(["interchange"]))
@click.option("--out", "out_file", required=True, type=click.Path())
@_handle_errors
def export(project_dir, fmt, out_file):
    """Write the story's prompts as an interchange file."""
    state, _ = ProjectStore(project_dir).load()
    text = export_interchange(compile_prompts(state))
    Path(out_file).write_text(text, encoding="utf-8")
    _emit({"out": str(out_file), "format": fmt, "records": 1})


@main.command(name="import")
@click.option("--in", "in_file", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_handle_errors
def import_cmd(in_file, out_dir):
    """Import interchange records into story projects.

    A single-record file becomes the project at OUT; a multi-record file
    becomes one subdirectory per record.
    """
    from .edits import DirtySet, History, StateDiff

    stories = import_dataset(Path(in_file).read_text(encoding="utf-8"))
    out = Path(out_dir)
    written = []
    for story in stories:
        target = out if len(stories) == 1 else out / story.id
        history = History()
        history.commit(story, StateDiff(), DirtySet(), origin="planner", note=f"imported from {in_file}")
        ProjectStore(target).save(story, history)
        written.append({"story_id": story.id, "dir": str(target), "pages": len(story.pages)})
    _emit({"imported": written})


@main.group()
def dataset():
    """Dataset generation tooling."""


@dataset.command(name="gen")
@click.option("--spec", "spec_file", default=None, type=click.Path(exists=True),
              help="spec JSON file (defaults to the shipped 192-spec corpus)")
@click.option("--out", "out_file", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@_handle_errors
def dataset_gen(spec_file, out_file, seed):
    """Render dataset specs into an interchange file."""
    specs: list[DatasetSpec] = (
        load_dataset_specs(spec_file) if spec_file else shipped_dataset_specs()
    )
    records = generate_dataset(specs, seed=seed)
    Path(out_file).write_text("\n".join(records), encoding="utf-8")
    _emit({"out": str(out_file), "records": len(records)})


@main.command()
@click.argument("project_dir", type=click.Path(exists=True))
@click.option("--embedding", default="mock", type=click.Choice(["mock", "http"]), show_default=True)
@click.option("--csv", "as_csv", is_flag=True, help="per-edit rows as CSV")
@_handle_errors
def metrics(project_dir, embedding, as_csv):
    """Consistency and edit-efficiency reports for a project."""
    from . import metrics as metrics_mod
    from .errors import NoEdits, TooFewPages

    store = ProjectStore(project_dir)
    state, history = store.load()
    backend = (
        HttpEmbeddingBackend(BackendConfig.from_env("STORYSTATE_EMBED"))
        if embedding == "http"
        else MockEmbeddingBackend()
    )
    out: dict = {"consistency": None, "edit_efficiency": None}
    try:
        out["consistency"] = metrics_mod.story_consistency(state, store, backend).to_dict()
    except (TooFewPages, StoryStateError) as exc:
        out["consistency_error"] = str(exc)
    try:
        report = metrics_mod.edit_efficiency(history)
        if as_csv:
            click.echo(metrics_mod.efficiency_csv(report), nl=False)
            return
        out["edit_efficiency"] = report.to_dict()
    except NoEdits as exc:
        out["edit_efficiency_error"] = str(exc)
    _emit(out)


@main.command()
@click.option("--port", default=8500, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--root", "project_root", required=True, type=click.Path())
@click.option("--backend", default="mock", type=click.Choice(["mock", "http"]), show_default=True)
@click.option("--ui-dir", default=None, type=click.Path(exists=True))
@_handle_errors
def serve(port, host, project_root, backend, ui_dir):
    """Serve the HTTP API (and the web UI when --ui-dir is given)."""
    import uvicorn

    from .api import create_app

    config = ServiceConfig.load(project_root=project_root, backend=backend, ui_dir=ui_dir)
    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
