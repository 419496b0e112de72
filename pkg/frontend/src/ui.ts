/** DOM rendering, no framework: the whole view re-renders from the controller
 * after every server round-trip, so a browser refresh reproduces the exact
 * same view from server state. */

import { StoryController } from "./store";
import type { EditOp } from "./types";

const BADGE_LABELS: Record<string, string> = {
  "fresh": "fresh",
  "regenerated-this-edit": "regenerated",
  "failed": "failed",
  "critic-flagged": "critic",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  for (const child of children) node.append(child);
  return node;
}

export class StoryView {
  constructor(
    private root: HTMLElement,
    private controller: StoryController<string>,
  ) {}

  render(): void {
    const view = this.controller.view;
    this.root.replaceChildren();
    if (!view) {
      this.root.append(el("p", {}, ["No story loaded."]));
      return;
    }
    this.root.append(this.renderBanner());
    this.root.append(
      el("header", { class: "bar" }, [
        el("h1", {}, [view.title]),
        el("span", { class: "rev" }, [`head ${view.headRevision ?? "-"}`]),
      ]),
    );
    this.root.append(this.renderEditBox());
    this.root.append(this.renderGrid());
    this.root.append(this.renderFindings());
    this.root.append(
      el("div", { class: "panels" }, [
        this.renderSheetEditor(),
        this.renderWorldEditor(),
        this.renderHistory(),
      ]),
    );
  }

  private renderBanner(): HTMLElement {
    const banner = this.controller.banner;
    if (!banner) return el("div", { class: "banner hidden" });
    const box = el("div", { class: `banner ${banner.kind}` }, [banner.message]);
    if (banner.kind === "reload") {
      const btn = el("button", {}, ["Reload"]);
      btn.onclick = () => void this.reload();
      box.append(btn);
    }
    return box;
  }

  private async reload(): Promise<void> {
    const id = this.controller.view?.storyId;
    if (id) {
      await this.controller.load(id);
      this.render();
    }
  }

  private renderEditBox(): HTMLElement {
    const input = el("input", {
      type: "text",
      class: "edit-input",
      placeholder: "e.g. on page 3, Hero should wear the same yellow coat as on page 1",
    });
    const button = el("button", {}, ["Apply edit"]);
    button.onclick = async () => {
      if (!input.value.trim()) return;
      try {
        await this.controller.submitFreeText(input.value.trim());
        input.value = "";
      } catch {
        // the controller recorded a banner; fall through to render it
      }
      this.render();
    };
    return el("div", { class: "edit-box" }, [input, button]);
  }

  private renderGrid(): HTMLElement {
    const view = this.controller.view!;
    const grid = el("div", { class: "grid" });
    for (const pv of view.pages) {
      const badges = el(
        "div",
        { class: "badges" },
        pv.badges.map((b) => el("span", { class: `badge ${b}` }, [BADGE_LABELS[b] ?? b])),
      );
      const img = pv.thumbnail
        ? el("img", { src: String(pv.thumbnail), alt: `page ${pv.page.ordinal}` })
        : el("div", { class: "placeholder" }, ["no image"]);
      const card = el("figure", { class: "page-card", "data-page": pv.page.id }, [
        img,
        badges,
        el("figcaption", {}, [`${pv.page.ordinal}. ${pv.page.scene_description}`]),
        this.renderConstraints(pv.page.id, pv.page.constraints),
      ]);
      grid.append(card);
    }
    return grid;
  }

  private renderConstraints(
    pageId: string,
    constraints: { key: string; description: string }[],
  ): HTMLElement {
    const list = el("ul", { class: "constraints" });
    for (const c of constraints) {
      const remove = el("button", { class: "mini" }, ["x"]);
      remove.onclick = () => void this.submitOps([
        { op: "remove_page_constraint", page: pageId, key: c.key },
      ]);
      list.append(el("li", {}, [`${c.key}: ${c.description} `, remove]));
    }
    const key = el("input", { class: "mini-input", placeholder: "slot" });
    const desc = el("input", { class: "mini-input wide", placeholder: "description" });
    const add = el("button", { class: "mini" }, ["+"]);
    add.onclick = () => {
      if (key.value.trim() && desc.value.trim()) {
        void this.submitOps([
          {
            op: "set_page_constraint",
            page: pageId,
            key: key.value.trim(),
            description: desc.value.trim(),
          },
        ]);
      }
    };
    list.append(el("li", { class: "adder" }, [key, desc, add]));
    return list;
  }

  private async submitOps(ops: EditOp[]): Promise<void> {
    try {
      await this.controller.submitOps(ops);
    } catch {
      // banner already set
    }
    this.render();
  }

  private renderFindings(): HTMLElement {
    const view = this.controller.view!;
    if (view.findings.length === 0) return el("div", { class: "findings empty" });
    const box = el("div", { class: "findings" }, [el("h2", {}, ["Critic findings"])]);
    for (const f of view.findings) {
      const accept = el("button", {}, ["Accept fix"]);
      accept.onclick = async () => {
        try {
          await this.controller.acceptFinding(f.id);
        } catch {
          // banner already set
        }
        this.render();
      };
      box.append(
        el("div", { class: "finding-card" }, [
          el("strong", {}, [`${f.kind} on ${f.page}`]),
          el("p", {}, [f.detail]),
          accept,
        ]),
      );
    }
    return box;
  }

  private renderSheetEditor(): HTMLElement {
    const view = this.controller.view!;
    const box = el("div", { class: "panel" }, [el("h2", {}, ["Character sheet"])]);
    for (const entry of view.state.characters) {
      const rows = el("ul", {});
      for (const [key, value] of Object.entries(entry.attributes)) {
        const input = el("input", { class: "mini-input wide", value });
        const save = el("button", { class: "mini" }, ["save"]);
        save.onclick = () => void this.submitOps([
          { op: "set_character_attribute", character: entry.id, key, value: input.value },
        ]);
        rows.append(el("li", {}, [`${key}: `, input, save]));
      }
      const newKey = el("input", { class: "mini-input", placeholder: "attribute" });
      const newValue = el("input", { class: "mini-input wide", placeholder: "value" });
      const add = el("button", { class: "mini" }, ["+"]);
      add.onclick = () => {
        if (newKey.value.trim()) {
          void this.submitOps([
            {
              op: "set_character_attribute",
              character: entry.id,
              key: newKey.value.trim(),
              value: newValue.value,
            },
          ]);
        }
      };
      rows.append(el("li", { class: "adder" }, [newKey, newValue, add]));
      box.append(el("div", { class: "character" }, [el("h3", {}, [entry.name]), rows]));
    }
    return box;
  }

  private renderWorldEditor(): HTMLElement {
    const view = this.controller.view!;
    const box = el("div", { class: "panel" }, [el("h2", {}, ["World"])]);
    for (const field of ["style", "tone"] as const) {
      const input = el("input", { class: "mini-input wide", value: view.state.world[field] });
      const save = el("button", { class: "mini" }, ["save"]);
      save.onclick = () => void this.submitOps([
        { op: "set_world_field", field, value: input.value },
      ]);
      box.append(el("div", {}, [`${field}: `, input, save]));
    }
    return box;
  }

  private renderHistory(): HTMLElement {
    const view = this.controller.view!;
    const box = el("div", { class: "panel" }, [el("h2", {}, ["History"])]);
    const list = el("ul", { class: "history" });
    for (const rev of [...view.revisions].reverse()) {
      const revertBtn = el("button", { class: "mini" }, ["revert"]);
      revertBtn.onclick = async () => {
        try {
          await this.controller.revertTo(rev.id);
        } catch {
          // banner already set
        }
        this.render();
      };
      const pages = rev.dirty.image_pages.length;
      list.append(
        el("li", {}, [
          el("code", {}, [rev.id]),
          ` ${rev.origin}${rev.note ? `: ${rev.note}` : ""} (${pages} pages) `,
          revertBtn,
        ]),
      );
    }
    box.append(list);
    return box;
  }
}
