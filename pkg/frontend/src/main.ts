/** Browser wiring: canvas, chat log, and the session API. */
import { SessionApi } from "./api.js";
import { ChatController, ChatState } from "./controller.js";
import { fitTransform, FitTransform } from "./coords.js";
import { hitTest, selectionOverlays, transcriptOverlays, OverlayShape } from "./overlay.js";
import { SelectionTracker } from "./selection.js";
import { ImageDims } from "./types.js";

const apiBase =
  new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8080";

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const chatLog = document.getElementById("chat-log")!;
const statusLine = document.getElementById("status")!;
const input = document.getElementById("message") as HTMLInputElement;
const sendButton = document.getElementById("send") as HTMLButtonElement;
const retryButton = document.getElementById("retry") as HTMLButtonElement;
const clearButton = document.getElementById("clear-selections") as HTMLButtonElement;
const imageUrlInput = document.getElementById("image-url") as HTMLInputElement;
const loadButton = document.getElementById("load-image") as HTMLButtonElement;
const zoomInButton = document.getElementById("zoom-in") as HTMLButtonElement;
const zoomOutButton = document.getElementById("zoom-out") as HTMLButtonElement;

const api = new SessionApi(apiBase);
const controller = new ChatController(api, render);

let image: HTMLImageElement | null = null;
let dims: ImageDims = { width: 1, height: 1 };
let zoom = 1;
let shapes: OverlayShape[] = [];
let hoveredShape: number | null = null;

function transform(): FitTransform {
  return fitTransform(dims, canvas.width, canvas.height, zoom);
}

const tracker = new SelectionTracker(
  transform,
  () => dims,
  (selection) => controller.addSelection(selection)
);

loadButton.addEventListener("click", async () => {
  const uri = imageUrlInput.value.trim();
  if (!uri) return;
  const img = new Image();
  img.crossOrigin = "anonymous";
  img.onload = async () => {
    image = img;
    dims = { width: img.naturalWidth, height: img.naturalHeight };
    zoom = 1;
    try {
      await controller.start(uri, dims);
      location.hash = controller.state.sessionId ?? "";
      statusLine.textContent = `session ${controller.state.sessionId}`;
    } catch (exc) {
      statusLine.textContent = `failed to create session: ${exc}`;
    }
  };
  img.onerror = () => {
    statusLine.textContent = "image failed to load";
  };
  img.src = uri;
});

function canvasPoint(ev: PointerEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
}

canvas.addEventListener("pointerdown", (ev) => {
  if (!image) return;
  const p = canvasPoint(ev);
  tracker.pointerDown(p.x, p.y);
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointermove", (ev) => {
  const p = canvasPoint(ev);
  tracker.pointerMove(p.x, p.y);
  hoveredShape = hitTest(shapes, p.x, p.y);
  draw();
});
canvas.addEventListener("pointerup", (ev) => {
  if (!image) return;
  const p = canvasPoint(ev);
  tracker.pointerUp(p.x, p.y);
});

zoomInButton.addEventListener("click", () => {
  zoom = Math.min(zoom * 1.25, 8);
  draw();
});
zoomOutButton.addEventListener("click", () => {
  zoom = Math.max(zoom / 1.25, 0.25);
  draw();
});
clearButton.addEventListener("click", () => controller.clearSelections());

sendButton.addEventListener("click", () => void submit());
input.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") void submit();
});
retryButton.addEventListener("click", () => void controller.retry());

async function submit(): Promise<void> {
  const text = input.value;
  if (!controller.canSend) return;
  await controller.send(text);
  if (!controller.state.error) input.value = "";
}

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;");
}

/** Show the serialized region text the model actually received, highlighted. */
function bubbleHtml(text: string): string {
  return escapeHtml(text).replace(
    /(&lt;box&gt;.*?&lt;\/box&gt;)/g,
    '<span class="region-span">$1</span>'
  );
}

function render(state: ChatState): void {
  chatLog.innerHTML = "";
  state.turns.forEach((turn, i) => {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${turn.role}`;
    bubble.innerHTML = bubbleHtml(turn.text);
    if (turn.regions.length > 0) {
      bubble.style.borderLeft = `4px solid ${shapeColor(i)}`;
    }
    chatLog.appendChild(bubble);
  });
  chatLog.scrollTop = chatLog.scrollHeight;
  sendButton.disabled = !controller.canSend;
  retryButton.hidden = !(state.error && state.error.canRetry);
  statusLine.textContent = state.error
    ? `error: ${state.error.message}`
    : state.sending
      ? "waiting for the model..."
      : statusLine.textContent;
  draw();
}

function shapeColor(turnIndex: number): string {
  const t = transform();
  const all = transcriptOverlays(controller.state.turns, t);
  const shape = all.find((s) => s.turnIndex === turnIndex);
  return shape ? shape.color : "#888";
}

function draw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!image) {
    ctx.fillStyle = "#555";
    ctx.fillText("load an image to start", 20, 30);
    return;
  }
  const t = transform();
  ctx.drawImage(image, t.offsetX, t.offsetY, dims.width * t.scale, dims.height * t.scale);
  shapes = [
    ...transcriptOverlays(controller.state.turns, t),
    ...selectionOverlays(controller.state.selections, t),
  ];
  shapes.forEach((shape, i) => {
    ctx.lineWidth = i === hoveredShape ? 3 : 2;
    ctx.strokeStyle = shape.color;
    ctx.fillStyle = shape.color;
    if (shape.kind === "point") {
      const p = shape.points[0];
      ctx.beginPath();
      ctx.arc(p.x, p.y, 5, 0, Math.PI * 2);
      ctx.fill();
    } else if (shape.points.length >= 2) {
      const [a, b] = shape.points;
      ctx.strokeRect(
        Math.min(a.x, b.x),
        Math.min(a.y, b.y),
        Math.abs(b.x - a.x),
        Math.abs(b.y - a.y)
      );
    }
  });
  const drag = tracker.dragRect();
  if (drag) {
    ctx.strokeStyle = "#f2c14e";
    ctx.setLineDash([6, 4]);
    ctx.strokeRect(drag.x, drag.y, drag.width, drag.height);
    ctx.setLineDash([]);
  }
}

// Reload restores the transcript for the session in the URL hash.
const restored = location.hash.slice(1);
if (restored) {
  controller
    .restore(restored)
    .then(() => {
      statusLine.textContent = `restored session ${restored}`;
      const img = new Image();
      img.crossOrigin = "anonymous";
      img.onload = () => {
        image = img;
        dims = controller.state.dims ?? { width: img.naturalWidth, height: img.naturalHeight };
        draw();
      };
      img.src = controller.state.imageUri;
      imageUrlInput.value = controller.state.imageUri;
    })
    .catch(() => {
      statusLine.textContent = "stored session expired; load an image to start";
      location.hash = "";
    });
}

draw();
