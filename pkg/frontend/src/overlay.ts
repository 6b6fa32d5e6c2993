/** Overlay geometry: turn regions and pending selections at the current zoom. */
import { FitTransform, nativeToDisplay } from "./coords.js";
import { PendingSelection, TurnView } from "./types.js";

export const TURN_COLORS = [
  "#e05c4b",
  "#4878a8",
  "#4ba86a",
  "#b07cc6",
  "#d9a441",
  "#46b3b3",
];

export interface OverlayShape {
  turnIndex: number; // -1 for pending selections
  color: string;
  kind: "box" | "point" | "polygon";
  /** Display-space polyline: 1 point for clicks, 2 corners for boxes. */
  points: { x: number; y: number }[];
}

export function colorForTurn(turnIndex: number): string {
  return TURN_COLORS[((turnIndex % TURN_COLORS.length) + TURN_COLORS.length) % TURN_COLORS.length];
}

/** Historical regions from the transcript, mapped into display coordinates. */
export function transcriptOverlays(turns: TurnView[], t: FitTransform): OverlayShape[] {
  const shapes: OverlayShape[] = [];
  turns.forEach((turn, turnIndex) => {
    for (const region of turn.regions) {
      shapes.push({
        turnIndex,
        color: colorForTurn(turnIndex),
        kind: region.kind === "box" ? "box" : region.kind === "point" ? "point" : "polygon",
        points: region.points_px.map(([x, y]) => nativeToDisplay(x, y, t)),
      });
    }
  });
  return shapes;
}

export function selectionOverlays(
  selections: PendingSelection[],
  t: FitTransform
): OverlayShape[] {
  return selections.map((s) => ({
    turnIndex: -1,
    color: "#f2c14e",
    kind: s.kind === "box" ? "box" : "point",
    points: s.pointsPx.map(([x, y]) => nativeToDisplay(x, y, t)),
  }));
}

/** Index of the topmost shape under the cursor, or null; points get a 6px halo. */
export function hitTest(shapes: OverlayShape[], x: number, y: number): number | null {
  for (let i = shapes.length - 1; i >= 0; i--) {
    const s = shapes[i];
    if (s.kind === "point") {
      if (Math.hypot(s.points[0].x - x, s.points[0].y - y) <= 6) return i;
    } else if (s.kind === "box" && s.points.length === 2) {
      const [a, b] = s.points;
      if (x >= Math.min(a.x, b.x) && x <= Math.max(a.x, b.x) &&
          y >= Math.min(a.y, b.y) && y <= Math.max(a.y, b.y)) {
        return i;
      }
    }
  }
  return null;
}
