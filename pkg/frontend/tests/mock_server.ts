/** In-memory stand-in for the session API, with request capture and scripted failures. */
import { EventPayload, TurnView } from "../src/types.js";

interface SessionRow {
  imageUri: string;
  width: number;
  height: number;
  turns: TurnView[];
}

export interface CapturedPost {
  sessionId: string;
  text: string;
  events: EventPayload[];
}

function renderSpan(pointsPx: number[][], width: number, height: number): string {
  const coords: string[] = [];
  for (const [x, y] of pointsPx) {
    coords.push((x / width).toFixed(3), (y / height).toFixed(3));
  }
  return `<box>${coords.join(",")}</box>`;
}

export class MockServer {
  sessions = new Map<string, SessionRow>();
  posts: CapturedPost[] = [];
  failNextWith: number | null = null;
  private counter = 0;

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input);
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;

    if (method === "POST" && url.pathname === "/v1/sessions") {
      const id = `session-${this.counter++}`;
      this.sessions.set(id, {
        imageUri: body.image_uri,
        width: body.width,
        height: body.height,
        turns: [],
      });
      return json(200, { session_id: id });
    }

    const messageMatch = url.pathname.match(/^\/v1\/sessions\/([^/]+)\/messages$/);
    if (method === "POST" && messageMatch) {
      const session = this.sessions.get(messageMatch[1]);
      if (!session) return json(404, { error: "unknown_session", detail: "no such session" });
      this.posts.push({ sessionId: messageMatch[1], text: body.text, events: body.events });
      if (this.failNextWith !== null) {
        const status = this.failNextWith;
        this.failNextWith = null;
        return json(status, { error: "backend_failure", detail: "backend failed: outage" });
      }
      let rendered = body.text as string;
      const regions = [];
      for (const event of body.events as EventPayload[]) {
        const span = renderSpan(event.points_px, session.width, session.height);
        rendered = rendered.includes("<region>")
          ? rendered.replace("<region>", span)
          : `${rendered} ${span}`;
        regions.push({
          kind: event.kind === "click" ? "point" : "box",
          points: event.points_px.map(([x, y]) => [x / session.width, y / session.height]),
          points_px: event.points_px,
        });
      }
      const userTurn: TurnView = {
        role: "user",
        text: rendered,
        timestamp: Date.now() / 1000,
        regions,
      };
      const assistantTurn: TurnView = {
        role: "assistant",
        text: `echo: you referred to ${regions.length} region(s)`,
        timestamp: Date.now() / 1000,
        regions: [],
      };
      session.turns.push(userTurn, assistantTurn);
      return json(200, {
        turn: { role: "assistant", text: assistantTurn.text },
        rendered_user_text: rendered,
      });
    }

    const sessionMatch = url.pathname.match(/^\/v1\/sessions\/([^/]+)$/);
    if (method === "GET" && sessionMatch) {
      const session = this.sessions.get(sessionMatch[1]);
      if (!session) return json(404, { error: "unknown_session", detail: "no such session" });
      return json(200, {
        session_id: sessionMatch[1],
        image_uri: session.imageUri,
        width: session.width,
        height: session.height,
        turns: session.turns,
      });
    }

    return json(404, { error: "not_found", detail: url.pathname });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
