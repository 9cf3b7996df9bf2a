import { ReviewApi } from "./api";
import { keyAction, ReviewStore } from "./store";
import { ReviewView } from "./view";

const api = new ReviewApi("");
const store = new ReviewStore(api);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
new ReviewView(root, store);

document.addEventListener("keydown", (event) => {
  if (event.target instanceof HTMLInputElement) return;
  const action = keyAction(event.key);
  if (!action) return;
  event.preventDefault();
  switch (action.kind) {
    case "move":
      store.moveSelection(action.delta);
      break;
    case "decide":
      void store.decideSelected(action.decision);
      break;
    case "filter":
      void store.setFilter(action.filter);
      break;
    case "export": {
      const url = store.exportUrl();
      if (url && store.canExport()) window.location.assign(url);
      break;
    }
  }
});

void store.loadJobs().then(() => {
  if (store.state.jobs.length === 1) {
    const only = store.state.jobs[0];
    if (only) void store.openJob(only.id);
  }
});
