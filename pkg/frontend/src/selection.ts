/** Pointer gesture tracking: short press = click, drag = box. */
import { displayToNative, FitTransform } from "./coords.js";
import { DisplayPoint, ImageDims, PendingSelection } from "./types.js";

const CLICK_THRESHOLD_PX = 4;

export interface DragRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

export class SelectionTracker {
  private downAt: DisplayPoint | null = null;
  private current: DisplayPoint | null = null;

  constructor(
    private getTransform: () => FitTransform,
    private getDims: () => ImageDims,
    private onSelect: (selection: PendingSelection) => void
  ) {}

  pointerDown(x: number, y: number): void {
    this.downAt = { x, y };
    this.current = { x, y };
  }

  pointerMove(x: number, y: number): void {
    if (this.downAt !== null) {
      this.current = { x, y };
    }
  }

  /** Live rectangle for drawing while dragging, in display coordinates. */
  dragRect(): DragRect | null {
    if (this.downAt === null || this.current === null) return null;
    const { downAt, current } = this;
    if (distance(downAt, current) < CLICK_THRESHOLD_PX) return null;
    return {
      x: Math.min(downAt.x, current.x),
      y: Math.min(downAt.y, current.y),
      width: Math.abs(current.x - downAt.x),
      height: Math.abs(current.y - downAt.y),
    };
  }

  pointerUp(x: number, y: number): void {
    if (this.downAt === null) return;
    const down = this.downAt;
    this.downAt = null;
    this.current = null;
    const t = this.getTransform();
    const dims = this.getDims();
    if (distance(down, { x, y }) < CLICK_THRESHOLD_PX) {
      const p = displayToNative(down.x, down.y, t, dims);
      this.onSelect({ kind: "click", pointsPx: [[p.x, p.y]] });
      return;
    }
    const a = displayToNative(down.x, down.y, t, dims);
    const b = displayToNative(x, y, t, dims);
    this.onSelect({
      kind: "box",
      pointsPx: [
        [Math.min(a.x, b.x), Math.min(a.y, b.y)],
        [Math.max(a.x, b.x), Math.max(a.y, b.y)],
      ],
    });
  }

  cancel(): void {
    this.downAt = null;
    this.current = null;
  }
}

function distance(a: DisplayPoint, b: DisplayPoint): number {
  return Math.hypot(a.x - b.x, a.y - b.y);
}
