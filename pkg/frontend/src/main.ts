/** Wiring for the composer page: canvas with zoom/pan and a draggable box,
 * attribute/seed controls, result panels, and a request history with A/B
 * compare. Generation requests run through a serial queue so the page stays
 * responsive and the service sees one request at a time. */
import { ApiClient, EmbeddingsInfo, GenerateRequest, GenerateResponse, ServiceError } from "./api.js";
import {
  Box,
  CanvasSelection,
  NoImageError,
  Size,
  Viewport,
  displayPointToImage,
  imageToDisplay,
  normalizeBox,
  toImageCoords,
} from "./coords.js";
import { HistoryEntry, SessionHistory } from "./history.js";
import { SerialQueue } from "./queue.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

type Slot = "A" | "B";

interface AppState {
  image: HTMLImageElement | null;
  imageSize: Size | null;
  basePng: string | null; // base64 of the uploaded file
  viewport: Viewport;
  // box in image coordinates; null until drawn
  box: Box | null;
  drag:
    | { kind: "draw"; startX: number; startY: number }
    | { kind: "move"; offX: number; offY: number }
    | { kind: "pan"; startX: number; startY: number; panX: number; panY: number }
    | null;
  embeddings: EmbeddingsInfo | null;
  compareSlot: Slot;
}

const state: AppState = {
  image: null,
  imageSize: null,
  basePng: null,
  viewport: { zoom: 1, panX: 0, panY: 0 },
  box: null,
  drag: null,
  embeddings: null,
  compareSlot: "A",
};

const client = new ApiClient("");
const queue = new SerialQueue();
const history = new SessionHistory();

const canvas = $<HTMLCanvasElement>("canvas");
const ctx = canvas.getContext("2d")!;
const errorBar = $<HTMLDivElement>("error");
const statusBar = $<HTMLSpanElement>("status");

// ------------------------------------------------------------ error/status

function showError(message: string) {
  errorBar.textContent = message;
  errorBar.hidden = false;
}

function clearError() {
  errorBar.hidden = true;
}

function setBusy(busy: boolean) {
  $<HTMLButtonElement>("generate").disabled = busy || state.basePng === null;
  statusBar.textContent = busy
    ? queue.depth > 0
      ? `generating (${queue.depth} queued)`
      : "generating"
    : "idle";
}

// ------------------------------------------------------------------ canvas

function draw() {
  ctx.fillStyle = "#20242b";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (state.image) {
    const vp = state.viewport;
    ctx.save();
    ctx.imageSmoothingEnabled = vp.zoom < 1;
    ctx.setTransform(vp.zoom, 0, 0, vp.zoom, vp.panX, vp.panY);
    ctx.drawImage(state.image, 0, 0);
    ctx.restore();
  }
  if (state.box) {
    const d = imageToDisplay(state.box, state.viewport);
    ctx.strokeStyle = "#ffcc40";
    ctx.lineWidth = 2;
    ctx.setLineDash([6, 4]);
    ctx.strokeRect(d.x, d.y, d.w, d.h);
    ctx.setLineDash([]);
  }
  updateBoxReadout();
}

function updateBoxReadout() {
  const readout = $<HTMLSpanElement>("box-readout");
  if (!state.box || !state.imageSize) {
    readout.textContent = "no box";
    return;
  }
  try {
    const px = snappedBox();
    readout.textContent = `box ${px.x},${px.y} ${px.w}×${px.h}px`;
  } catch {
    readout.textContent = "no box";
  }
}

/** Current selection as the integer image bbox a request would carry. */
function snappedBox(): Box {
  if (!state.box) throw new NoImageError();
  const selection: CanvasSelection = {
    bbox: imageToDisplay(state.box, state.viewport),
    viewport: state.viewport,
  };
  return toImageCoords(selection, state.imageSize);
}

function canvasPos(ev: MouseEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

canvas.addEventListener("mousedown", (ev) => {
  if (!state.image) return;
  const pos = canvasPos(ev);
  const img = displayPointToImage(pos.x, pos.y, state.viewport);
  if (ev.shiftKey || ev.button === 1) {
    state.drag = {
      kind: "pan",
      startX: pos.x,
      startY: pos.y,
      panX: state.viewport.panX,
      panY: state.viewport.panY,
    };
  } else if (state.box && inBox(img, state.box)) {
    state.drag = { kind: "move", offX: img.x - state.box.x, offY: img.y - state.box.y };
  } else {
    state.drag = { kind: "draw", startX: img.x, startY: img.y };
    state.box = { x: img.x, y: img.y, w: 0, h: 0 };
  }
});

function inBox(p: { x: number; y: number }, b: Box): boolean {
  return p.x >= b.x && p.x <= b.x + b.w && p.y >= b.y && p.y <= b.y + b.h;
}

canvas.addEventListener("mousemove", (ev) => {
  if (!state.drag) return;
  const pos = canvasPos(ev);
  if (state.drag.kind === "pan") {
    state.viewport.panX = state.drag.panX + pos.x - state.drag.startX;
    state.viewport.panY = state.drag.panY + pos.y - state.drag.startY;
  } else {
    const img = displayPointToImage(pos.x, pos.y, state.viewport);
    if (state.drag.kind === "draw") {
      state.box = normalizeBox({
        x: state.drag.startX,
        y: state.drag.startY,
        w: img.x - state.drag.startX,
        h: img.y - state.drag.startY,
      });
    } else if (state.box) {
      state.box = {
        ...state.box,
        x: img.x - state.drag.offX,
        y: img.y - state.drag.offY,
      };
    }
  }
  draw();
});

window.addEventListener("mouseup", () => {
  state.drag = null;
  draw();
});

canvas.addEventListener("wheel", (ev) => {
  if (!state.image) return;
  ev.preventDefault();
  const pos = canvasPos(ev);
  const vp = state.viewport;
  const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
  const zoom = Math.min(Math.max(vp.zoom * factor, 0.125), 16);
  // keep the pixel under the cursor fixed
  vp.panX = pos.x - ((pos.x - vp.panX) / vp.zoom) * zoom;
  vp.panY = pos.y - ((pos.y - vp.panY) / vp.zoom) * zoom;
  vp.zoom = zoom;
  draw();
});

function fitImage() {
  if (!state.imageSize) return;
  const { width, height } = state.imageSize;
  const zoom = Math.min(canvas.width / width, canvas.height / height, 4);
  state.viewport = {
    zoom,
    panX: (canvas.width - width * zoom) / 2,
    panY: (canvas.height - height * zoom) / 2,
  };
  draw();
}

$<HTMLButtonElement>("fit").addEventListener("click", fitImage);
$<HTMLButtonElement>("one-to-one").addEventListener("click", () => {
  state.viewport = { zoom: 1, panX: 0, panY: 0 };
  draw();
});

// ------------------------------------------------------------------ upload

$<HTMLInputElement>("file").addEventListener("change", async (ev) => {
  const input = ev.target as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) return;
  clearError();
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  bytes.forEach((b) => (binary += String.fromCharCode(b)));
  const image = new Image();
  image.onload = () => {
    state.image = image;
    state.imageSize = { width: image.naturalWidth, height: image.naturalHeight };
    state.basePng = btoa(binary);
    state.box = null;
    fitImage();
    setBusy(queue.busy);
  };
  image.onerror = () => showError(`${file.name}: not a decodable image`);
  image.src = URL.createObjectURL(file);
});

// ---------------------------------------------------------------- controls

function populateControls(info: EmbeddingsInfo) {
  state.embeddings = info;
  if (info.kind === "toy_attributes") {
    fillSelect("shape", info.shapes);
    fillSelect("color", Object.keys(info.colors));
    fillSelect("size", info.sizes);
    $<HTMLDivElement>("attr-controls").hidden = false;
    $<HTMLDivElement>("row-controls").hidden = true;
  } else {
    const row = $<HTMLInputElement>("row");
    row.max = String(info.count - 1);
    $<HTMLDivElement>("attr-controls").hidden = true;
    $<HTMLDivElement>("row-controls").hidden = false;
  }
}

function fillSelect(id: string, options: string[]) {
  const select = $<HTMLSelectElement>(id);
  select.replaceChildren(
    ...options.map((name) => {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      return opt;
    }),
  );
}

$<HTMLButtonElement>("random-seed").addEventListener("click", () => {
  $<HTMLInputElement>("seed").value = String(Math.floor(Math.random() * 1e6));
});

function buildRequest(): GenerateRequest {
  if (!state.basePng) throw new NoImageError();
  const bbox = snappedBox();
  const text: GenerateRequest["text"] =
    state.embeddings?.kind === "table"
      ? { row: Number($<HTMLInputElement>("row").value) }
      : {
          attrs: {
            shape: $<HTMLSelectElement>("shape").value,
            color: $<HTMLSelectElement>("color").value,
            size: $<HTMLSelectElement>("size").value,
          },
        };
  const req: GenerateRequest = {
    base_png: state.basePng,
    bbox,
    text,
    seed: Number($<HTMLInputElement>("seed").value) || 0,
    mode: $<HTMLSelectElement>("mode").value as GenerateRequest["mode"],
    return_debug: $<HTMLInputElement>("debug").checked,
  };
  const override = $<HTMLSelectElement>("override").value;
  if (override !== "learned") {
    req.overrides = { mode: "constant", values: [Number(override)] };
  }
  return req;
}

// ------------------------------------------------------------------ panels

function renderPanels(target: HTMLElement, res: GenerateResponse) {
  target.replaceChildren();
  const panels: [string, string][] = [
    ["composite", res.composite_png],
    ["crop", res.crop_png],
    ["mask", res.mask_png],
    ...(res.switch_pngs ?? []).map(
      (png, i) => [`switch ${i}`, png] as [string, string],
    ),
  ];
  for (const [title, png] of panels) {
    const fig = document.createElement("figure");
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${png}`;
    img.alt = title;
    const cap = document.createElement("figcaption");
    cap.textContent = title;
    fig.append(img, cap);
    target.appendChild(fig);
  }
  const note = document.createElement("p");
  note.className = "timing";
  note.textContent = `seed ${res.seed}, ${res.timing_ms.toFixed(0)} ms`;
  target.appendChild(note);
}

function runRequest(req: GenerateRequest, target: HTMLElement, entry?: HistoryEntry) {
  clearError();
  setBusy(true);
  queue
    .submit(() => client.generate(req))
    .then((res) => {
      renderPanels(target, res);
      if (entry) markRendered(entry);
    })
    .catch((err) => {
      if (err instanceof ServiceError) {
        showError(`service: ${err.status} ${err.message}`);
      } else if (err instanceof NoImageError) {
        showError(err.message);
      } else {
        showError(`service unreachable: ${err}`);
      }
    })
    .finally(() => setBusy(queue.busy));
}

// ----------------------------------------------------------------- history

function markRendered(entry: HistoryEntry) {
  const item = document.querySelector(`[data-entry="${entry.id}"]`);
  item?.classList.add("rendered");
}

function addHistoryItem(entry: HistoryEntry) {
  const list = $<HTMLUListElement>("history");
  const item = document.createElement("li");
  item.dataset["entry"] = String(entry.id);
  const repeats = history.repeatsOf(entry);
  item.textContent = `#${entry.id} ${entry.label}`;
  if (repeats.length > 0) {
    item.textContent += ` (same as #${repeats[0]})`;
  }
  const toA = document.createElement("button");
  toA.textContent = "A";
  const toB = document.createElement("button");
  toB.textContent = "B";
  toA.addEventListener("click", () =>
    runRequest(entry.request, $("panel-a"), entry),
  );
  toB.addEventListener("click", () =>
    runRequest(entry.request, $("panel-b"), entry),
  );
  item.append(" ", toA, toB);
  list.prepend(item);
}

$<HTMLButtonElement>("generate").addEventListener("click", () => {
  let req: GenerateRequest;
  try {
    req = buildRequest();
  } catch (err) {
    showError(
      err instanceof NoImageError
        ? "load an image and draw a box first"
        : String(err),
    );
    return;
  }
  if (req.bbox.w < 8 || req.bbox.h < 8) {
    showError("box must be at least 8x8 image pixels");
    return;
  }
  const entry = history.add(req);
  addHistoryItem(entry);
  const slot = state.compareSlot;
  state.compareSlot = slot === "A" ? "B" : "A"; // alternate for quick A/B
  runRequest(req, $(slot === "A" ? "panel-a" : "panel-b"), entry);
});

// ------------------------------------------------------------------- boot

async function boot() {
  draw();
  try {
    const health = await client.health();
    if (!health.checkpoint_loaded) {
      showError("service has no checkpoint loaded; generation will fail");
    }
    populateControls(await client.embeddings());
  } catch (err) {
    if (err instanceof ServiceError && err.status === 409) {
      showError("service has no checkpoint loaded; generation will fail");
    } else {
      showError(`service unreachable: ${err}`);
    }
    // static toy fallback keeps the form usable while the service is down
    populateControls({
      kind: "toy_attributes",
      shapes: ["ellipse", "rectangle", "triangle"],
      colors: { red: [0.95, 0.1, 0.1], green: [0.1, 0.9, 0.15], blue: [0.1, 0.2, 0.95] },
      sizes: ["small", "medium", "large"],
      size_fractions: {},
    });
  }
  setBusy(false);
}

void boot();
