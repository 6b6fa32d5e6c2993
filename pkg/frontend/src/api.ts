/** Thin client for the session HTTP API; fetch is injectable for tests. */
import { EventPayload, ImageDims, MessageResponse, TranscriptView } from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public status: number,
    public errorCode: string,
    public detail: string
  ) {
    super(`${errorCode} (${status}): ${detail}`);
    this.name = "ApiRequestError";
  }

  /** Backend failures (502) and transient transport errors are retryable. */
  get retryable(): boolean {
    return this.status === 502 || this.status === 0;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let errorCode = "error";
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    errorCode = body.error ?? errorCode;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiRequestError(resp.status, errorCode, detail);
}

export class SessionApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async post(path: string, body: unknown): Promise<any> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (exc) {
      throw new ApiRequestError(0, "network", String(exc));
    }
    await raiseForStatus(resp);
    return resp.json();
  }

  async createSession(imageUri: string, dims: ImageDims): Promise<string> {
    const body = await this.post("/v1/sessions", {
      image_uri: imageUri,
      width: dims.width,
      height: dims.height,
    });
    return body.session_id;
  }

  async postMessage(
    sessionId: string,
    text: string,
    events: EventPayload[]
  ): Promise<MessageResponse> {
    return this.post(`/v1/sessions/${sessionId}/messages`, { text, events });
  }

  async getTranscript(sessionId: string): Promise<TranscriptView> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}/v1/sessions/${sessionId}`);
    } catch (exc) {
      throw new ApiRequestError(0, "network", String(exc));
    }
    await raiseForStatus(resp);
    return resp.json();
  }
}
