export interface ImageDims {
  width: number;
  height: number;
}

export interface DisplayPoint {
  x: number;
  y: number;
}

export type SelectionKind = "click" | "box";

/** A referring selection in native image pixels, ready for the session API. */
export interface PendingSelection {
  kind: SelectionKind;
  pointsPx: number[][];
}

export interface RegionView {
  kind: string;
  points: number[][];
  points_px: number[][];
}

export interface TurnView {
  role: "user" | "assistant";
  text: string;
  timestamp: number;
  regions: RegionView[];
}

export interface TranscriptView {
  session_id: string;
  image_uri: string;
  width: number;
  height: number;
  turns: TurnView[];
}

export interface EventPayload {
  kind: SelectionKind;
  points_px: number[][];
}

export interface MessageResponse {
  turn: { role: string; text: string };
  rendered_user_text: string;
}
