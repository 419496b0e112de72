/** Entry point: pick a story (or create one), then hand off to the view. */

import { ApiClient } from "./api";
import { ThumbnailCache } from "./cache";
import { StoryController } from "./store";
import { StoryView } from "./ui";

const api = new ApiClient("");
const cache = new ThumbnailCache<string>(async (storyId, pageId) => {
  const { bytes, hash } = await api.fetchAsset(storyId, pageId, "page_image");
  const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
  return { value: url, hash };
});
const controller = new StoryController<string>(api, cache);

async function pickStory(): Promise<string | null> {
  const { stories } = await api.listStories();
  const params = new URLSearchParams(window.location.search);
  const wanted = params.get("story");
  if (wanted && stories.some((s) => s.dir === wanted || s.id === wanted)) return wanted;
  return stories.length > 0 ? stories[0].dir : null;
}

async function boot(): Promise<void> {
  const root = document.getElementById("app")!;
  const view = new StoryView(root, controller);
  const storyId = await pickStory();
  if (storyId === null) {
    root.replaceChildren();
    const prompt = document.createElement("input");
    prompt.placeholder = "a shy boy finds a lost robot in the city";
    prompt.className = "edit-input";
    const button = document.createElement("button");
    button.textContent = "Create story";
    button.onclick = async () => {
      if (!prompt.value.trim()) return;
      button.disabled = true;
      const created = await api.createStory(prompt.value.trim(), 10);
      await controller.load(created.story_id);
      view.render();
    };
    root.append("No stories yet. ", prompt, button);
    return;
  }
  await controller.load(storyId);
  view.render();
}

void boot();
