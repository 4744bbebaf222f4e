// Workbench wiring: load posed images, steer the view and the edit stack,
// watch the live preview, export script / image / mesh.

import { ServiceClient, ViewUpload } from "./api.js";
import { PreviewLoop } from "./preview.js";
import {
  Edit,
  ManipState,
  decodeBody,
  defaultPose,
  exportScript,
  importScript,
} from "./script.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const state: ManipState = { sessionId: null, edits: [], pose: defaultPose() };
let client = new ServiceClient("http://127.0.0.1:8601");
let lastPreviewBlob: Blob | null = null;

const banner = $("error-banner");
function showError(message: string): void {
  banner.textContent = message;
  banner.style.display = "block";
}
function clearError(): void {
  banner.style.display = "none";
}

const preview = new PreviewLoop(
  async (body) => {
    if (!state.sessionId) throw new Error("no session");
    return client.decode(state.sessionId, body);
  },
  {
    onImage: (blob) => {
      clearError();
      lastPreviewBlob = blob;
      const img = $("preview") as HTMLImageElement;
      const url = URL.createObjectURL(blob);
      img.onload = () => URL.revokeObjectURL(url);
      img.src = url;
    },
    onError: showError,
  },
);

function refresh(): void {
  if (state.sessionId) preview.request(decodeBody(state));
}

// ---------------------------------------------------------------------------
// Session creation

interface PendingView {
  file: File;
  azimuth: number;
  elevation: number;
}

const pendingViews: PendingView[] = [];

function fileToPngB64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(new Error("could not read file"));
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.substring(url.indexOf(",") + 1));
    };
    reader.readAsDataURL(file);
  });
}

function renderViewList(): void {
  const list = $("view-list");
  list.innerHTML = "";
  pendingViews.forEach((v, i) => {
    const row = document.createElement("li");
    row.textContent = `${v.file.name} az=${v.azimuth} el=${v.elevation}`;
    const remove = document.createElement("button");
    remove.textContent = "x";
    remove.onclick = () => {
      pendingViews.splice(i, 1);
      renderViewList();
    };
    row.appendChild(remove);
    list.appendChild(row);
  });
}

$("add-view").onclick = () => {
  const input = $("view-file") as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return showError("choose an image file first");
  pendingViews.push({
    file,
    azimuth: Number(($("view-azimuth") as HTMLInputElement).value),
    elevation: Number(($("view-elevation") as HTMLInputElement).value),
  });
  input.value = "";
  renderViewList();
};

$("connect").onclick = async () => {
  client = new ServiceClient(($("service-url") as HTMLInputElement).value);
  try {
    const models = await client.models();
    const select = $("model-select") as HTMLSelectElement;
    select.innerHTML = "";
    for (const name of models) {
      const option = document.createElement("option");
      option.value = option.textContent = name;
      select.appendChild(option);
    }
    clearError();
  } catch (err) {
    showError(err instanceof Error ? err.message : String(err));
  }
};

$("create-session").onclick = async () => {
  if (pendingViews.length === 0) return showError("add at least one posed view");
  try {
    const views: ViewUpload[] = [];
    for (const v of pendingViews) {
      views.push({
        image_png_b64: await fileToPngB64(v.file),
        pose: { azimuth: v.azimuth, elevation: v.elevation },
      });
    }
    const model = ($("model-select") as HTMLSelectElement).value;
    state.sessionId = await client.createSession(model, views);
    state.edits = [];
    state.pose = defaultPose();
    syncSliders();
    renderEditList();
    clearError();
    $("session-label").textContent = `session ${state.sessionId.slice(0, 8)}`;
    refresh();
  } catch (err) {
    showError(err instanceof Error ? err.message : String(err));
  }
};

// ---------------------------------------------------------------------------
// Pose sliders

const sliderIds = ["azimuth", "elevation", "tx", "ty", "tz", "scale"] as const;

function syncSliders(): void {
  ($("azimuth") as HTMLInputElement).value = String(state.pose.azimuth);
  ($("elevation") as HTMLInputElement).value = String(state.pose.elevation);
  ($("tx") as HTMLInputElement).value = String(state.pose.translation[0]);
  ($("ty") as HTMLInputElement).value = String(state.pose.translation[1]);
  ($("tz") as HTMLInputElement).value = String(state.pose.translation[2]);
  ($("scale") as HTMLInputElement).value = String(state.pose.scale);
}

for (const id of sliderIds) {
  $(id).oninput = () => {
    const value = Number(($(id) as HTMLInputElement).value);
    if (id === "azimuth") state.pose.azimuth = value;
    else if (id === "elevation") state.pose.elevation = value;
    else if (id === "tx") state.pose.translation[0] = value;
    else if (id === "ty") state.pose.translation[1] = value;
    else if (id === "tz") state.pose.translation[2] = value;
    else state.pose.scale = value;
    $(`${id}-value`).textContent = String(value);
    refresh();
  };
}

// ---------------------------------------------------------------------------
// Edit stack

function defaultEdit(kind: string): Edit {
  switch (kind) {
    case "stretch":
      return { kind: "stretch", axis: "y", a: -1, b: 1, enabled: true };
    case "twist":
      return { kind: "twist", alpha: 0, splitY: 0, enabled: true };
    default:
      return { kind: "reflect", axis: "x", keep: "+", enabled: true };
  }
}

function editControls(edit: Edit, row: HTMLElement): void {
  const numeric = (label: string, value: number, min: number, max: number, step: number, set: (v: number) => void) => {
    const wrap = document.createElement("label");
    wrap.textContent = label;
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(min);
    input.max = String(max);
    input.step = String(step);
    input.value = String(value);
    input.oninput = () => {
      set(Number(input.value));
      refresh();
    };
    wrap.appendChild(input);
    row.appendChild(wrap);
  };
  const choice = (label: string, value: string, options: string[], set: (v: string) => void) => {
    const wrap = document.createElement("label");
    wrap.textContent = label;
    const select = document.createElement("select");
    for (const o of options) {
      const opt = document.createElement("option");
      opt.value = opt.textContent = o;
      if (o === value) opt.selected = true;
      select.appendChild(opt);
    }
    select.onchange = () => {
      set(select.value);
      refresh();
    };
    wrap.appendChild(select);
    row.appendChild(wrap);
  };
  if (edit.kind === "stretch") {
    choice("axis", edit.axis, ["x", "y", "z"], (v) => (edit.axis = v as Edit & any));
    numeric("a", edit.a, -1.5, 1.5, 0.05, (v) => (edit.a = v));
    numeric("b", edit.b, -1.5, 1.5, 0.05, (v) => (edit.b = v));
  } else if (edit.kind === "twist") {
    numeric("alpha", edit.alpha, -180, 180, 1, (v) => (edit.alpha = v));
    numeric("split y", edit.splitY, -1, 1, 0.05, (v) => (edit.splitY = v));
  } else if (edit.kind === "reflect") {
    choice("axis", edit.axis, ["x", "z"], (v) => (edit.axis = v as "x" | "z"));
    choice("keep", edit.keep, ["+", "-"], (v) => (edit.keep = v as "+" | "-"));
  }
}

function renderEditList(): void {
  const list = $("edit-list");
  list.innerHTML = "";
  state.edits.forEach((edit, i) => {
    const row = document.createElement("li");
    const enable = document.createElement("input");
    enable.type = "checkbox";
    enable.checked = edit.enabled;
    enable.onchange = () => {
      edit.enabled = enable.checked;
      refresh();
    };
    row.appendChild(enable);
    const title = document.createElement("strong");
    title.textContent = edit.kind;
    row.appendChild(title);
    editControls(edit, row);
    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.onclick = () => {
      state.edits.splice(i, 1);
      renderEditList();
      refresh();
    };
    row.appendChild(remove);
    list.appendChild(row);
  });
}

$("add-edit").onclick = () => {
  const kind = ($("edit-kind") as HTMLSelectElement).value;
  state.edits.push(defaultEdit(kind));
  renderEditList();
  refresh();
};

// ---------------------------------------------------------------------------
// Export / import

function download(name: string, payload: Blob): void {
  const a = document.createElement("a");
  const url = URL.createObjectURL(payload);
  a.href = url;
  a.download = name;
  a.click();
  URL.revokeObjectURL(url);
}

$("export-script").onclick = () => {
  download("manipulation.json", new Blob([exportScript(state)], { type: "application/json" }));
};

$("export-image").onclick = () => {
  if (!lastPreviewBlob) return showError("no preview rendered yet");
  download("preview.png", lastPreviewBlob);
};

$("export-mesh").onclick = async () => {
  if (!state.sessionId) return showError("no session");
  try {
    const threshold = Number(($("mesh-threshold") as HTMLInputElement).value);
    const obj = await client.mesh(state.sessionId, threshold);
    download("reconstruction.obj", new Blob([obj], { type: "text/plain" }));
  } catch (err) {
    showError(err instanceof Error ? err.message : String(err));
  }
};

$("import-script").onchange = async () => {
  const input = $("import-script") as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return;
  try {
    const next = importScript(state, await file.text());
    state.edits = next.edits;
    renderEditList();
    refresh();
    clearError();
  } catch (err) {
    showError(err instanceof Error ? err.message : String(err));
  }
  input.value = "";
};
