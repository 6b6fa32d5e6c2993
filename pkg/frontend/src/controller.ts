/**
 * Chat session state machine.
 *
 * State is a pure function of (server transcript, pending input): every
 * successful send refreshes the transcript from the server, and a failed send
 * leaves the transcript untouched and arms a retry of the same payload.
 */
import { ApiRequestError, SessionApi } from "./api.js";
import {
  EventPayload,
  ImageDims,
  PendingSelection,
  TurnView,
} from "./types.js";

export interface ChatError {
  message: string;
  canRetry: boolean;
}

export interface ChatState {
  sessionId: string | null;
  imageUri: string;
  dims: ImageDims | null;
  turns: TurnView[];
  selections: PendingSelection[];
  sending: boolean;
  error: ChatError | null;
}

interface Attempt {
  text: string;
  events: EventPayload[];
}

export class ChatController {
  state: ChatState = {
    sessionId: null,
    imageUri: "",
    dims: null,
    turns: [],
    selections: [],
    sending: false,
    error: null,
  };

  private lastAttempt: Attempt | null = null;

  constructor(
    private api: SessionApi,
    private onChange: (state: ChatState) => void = () => {}
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  async start(imageUri: string, dims: ImageDims): Promise<void> {
    const sessionId = await this.api.createSession(imageUri, dims);
    this.state = {
      ...this.state,
      sessionId,
      imageUri,
      dims,
      turns: [],
      selections: [],
      error: null,
    };
    this.emit();
  }

  /** Rehydrate an existing session (page reload). */
  async restore(sessionId: string): Promise<void> {
    const view = await this.api.getTranscript(sessionId);
    this.state = {
      ...this.state,
      sessionId,
      imageUri: view.image_uri,
      dims: { width: view.width, height: view.height },
      turns: view.turns,
      selections: [],
      error: null,
    };
    this.emit();
  }

  addSelection(selection: PendingSelection): void {
    this.state = { ...this.state, selections: [...this.state.selections, selection] };
    this.emit();
  }

  clearSelections(): void {
    this.state = { ...this.state, selections: [] };
    this.emit();
  }

  /** One send in flight at a time; the button stays disabled while pending. */
  get canSend(): boolean {
    return this.state.sessionId !== null && !this.state.sending;
  }

  async send(text: string): Promise<void> {
    if (!this.canSend) return;
    const events: EventPayload[] = this.state.selections.map((s) => ({
      kind: s.kind,
      points_px: s.pointsPx,
    }));
    await this.dispatch({ text, events });
  }

  async retry(): Promise<void> {
    if (this.lastAttempt === null || this.state.sending) return;
    await this.dispatch(this.lastAttempt);
  }

  private async dispatch(attempt: Attempt): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null) return;
    this.state = { ...this.state, sending: true, error: null };
    this.emit();
    try {
      await this.api.postMessage(sessionId, attempt.text, attempt.events);
      const view = await this.api.getTranscript(sessionId);
      this.lastAttempt = null;
      this.state = {
        ...this.state,
        turns: view.turns,
        selections: [],
        sending: false,
        error: null,
      };
    } catch (exc) {
      // Transcript stays exactly as it was; the same payload can be retried.
      this.lastAttempt = attempt;
      const error: ChatError =
        exc instanceof ApiRequestError
          ? { message: exc.detail || exc.message, canRetry: exc.retryable }
          : { message: String(exc), canRetry: false };
      this.state = { ...this.state, sending: false, error };
    }
    this.emit();
  }
}
