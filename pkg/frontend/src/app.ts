/** Chat UI state and DOM rendering. No framework; render() rebuilds from state. */

import type { Decoder, MessageResponse, SessionResponse } from "./api.js";

export const DECODERS: Decoder[] = ["greedy", "beam", "hopskip", "cold"];
export const DEFAULT_DECODER: Decoder = "hopskip";

/** The slice of the API client the UI needs; tests substitute a scripted one. */
export interface ChatBackend {
  createSession(decoder: Decoder): Promise<SessionResponse>;
  sendMessage(sessionId: string, text: string): Promise<MessageResponse>;
}

export interface ChatMessage {
  speaker: "user" | "agent";
  text: string;
  meta?: MessageResponse;
  error?: boolean;
}

export interface Transcript {
  sessionId: string;
  decoder: Decoder;
  messages: ChatMessage[];
}

export class ChatApp {
  readonly root: HTMLElement;
  private readonly api: ChatBackend;
  private current: Transcript | null = null;
  private archived: Transcript[] = [];
  private busy = false;

  constructor(root: HTMLElement, api: ChatBackend) {
    this.root = root;
    this.api = api;
  }

  get activeTranscript(): Transcript | null {
    return this.current;
  }

  get archivedTranscripts(): readonly Transcript[] {
    return this.archived;
  }

  get inFlight(): boolean {
    return this.busy;
  }

  async init(decoder: Decoder = DEFAULT_DECODER): Promise<void> {
    const session = await this.api.createSession(decoder);
    this.current = { sessionId: session.session_id, decoder, messages: [] };
    this.render();
  }

  /** Send one user message; ignored while a previous send is in flight. */
  async send(text: string): Promise<boolean> {
    const transcript = this.current;
    if (this.busy || !transcript || !text.trim()) {
      return false;
    }
    this.busy = true;
    transcript.messages.push({ speaker: "user", text });
    this.render();
    try {
      const res = await this.api.sendMessage(transcript.sessionId, text);
      transcript.messages.push({ speaker: "agent", text: res.reply, meta: res });
    } catch (err) {
      transcript.messages.push({
        speaker: "agent",
        text: err instanceof Error ? err.message : String(err),
        error: true,
      });
    } finally {
      this.busy = false;
      this.render();
    }
    return true;
  }

  /** Archive the running conversation read-only and start a new session. */
  async switchDecoder(decoder: Decoder): Promise<void> {
    if (this.busy) {
      return;
    }
    if (this.current && this.current.decoder === decoder) {
      return;
    }
    if (this.current && this.current.messages.length > 0) {
      this.archived.push(this.current);
    }
    const session = await this.api.createSession(decoder);
    this.current = { sessionId: session.session_id, decoder, messages: [] };
    this.render();
  }

  render(): void {
    this.root.textContent = "";
    const toolbar = document.createElement("div");
    toolbar.className = "toolbar";
    toolbar.appendChild(this.renderDecoderPicker());
    this.root.appendChild(toolbar);

    const panes = document.createElement("div");
    panes.className = this.archived.length > 0 ? "panes split" : "panes";
    for (const transcript of this.archived) {
      panes.appendChild(this.renderPane(transcript, true));
    }
    if (this.current) {
      panes.appendChild(this.renderPane(this.current, false));
    }
    this.root.appendChild(panes);
    this.root.appendChild(this.renderComposer());
  }

  private renderDecoderPicker(): HTMLSelectElement {
    const select = document.createElement("select");
    select.id = "decoder";
    for (const name of DECODERS) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      option.selected = name === (this.current?.decoder ?? DEFAULT_DECODER);
      select.appendChild(option);
    }
    select.addEventListener("change", () => {
      void this.switchDecoder(select.value as Decoder);
    });
    return select;
  }

  private renderComposer(): HTMLFormElement {
    const form = document.createElement("form");
    form.className = "composer";
    const input = document.createElement("input");
    input.type = "text";
    input.placeholder = "say something";
    input.disabled = this.busy;
    const button = document.createElement("button");
    button.type = "submit";
    button.textContent = this.busy ? "..." : "send";
    button.disabled = this.busy;
    form.append(input, button);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const text = input.value;
      input.value = "";
      void this.send(text);
    });
    return form;
  }

  private renderPane(transcript: Transcript, readOnly: boolean): HTMLElement {
    const pane = document.createElement("section");
    pane.className = readOnly ? "pane archived" : "pane active";
    const head = document.createElement("header");
    head.textContent = readOnly
      ? `${transcript.decoder} (ended)`
      : transcript.decoder;
    pane.appendChild(head);
    const list = document.createElement("div");
    list.className = "messages";
    for (const message of transcript.messages) {
      list.appendChild(this.renderMessage(message));
    }
    pane.appendChild(list);
    return pane;
  }

  private renderMessage(message: ChatMessage): HTMLElement {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${message.speaker}${message.error ? " error" : ""}`;
    const text = document.createElement("p");
    text.className = "text";
    text.textContent = message.text;
    bubble.appendChild(text);
    const meta = message.meta;
    if (meta && meta.triggered && meta.entity) {
      const badge = document.createElement("span");
      badge.className = "badge";
      badge.textContent = `${meta.entity.name} · ${meta.entity.type}`;
      bubble.appendChild(badge);
      bubble.appendChild(this.renderInspector(meta));
    }
    return bubble;
  }

  private renderInspector(meta: MessageResponse): HTMLElement {
    const details = document.createElement("details");
    details.className = "inspector";
    const summary = document.createElement("summary");
    summary.textContent = `${meta.candidates.length} candidates`;
    details.appendChild(summary);

    const candidates = document.createElement("ul");
    candidates.className = "candidates";
    const top = meta.candidates.length > 0 ? meta.candidates[0].score : 0;
    const low = meta.candidates.length > 0
      ? meta.candidates[meta.candidates.length - 1].score
      : 0;
    const span = Math.max(top - low, 1e-9);
    for (const candidate of meta.candidates) {
      const row = document.createElement("li");
      row.className = "candidate";
      const label = document.createElement("span");
      label.textContent = `${candidate.name} (${candidate.score.toFixed(3)})`;
      const bar = document.createElement("div");
      bar.className = "bar";
      const width = 10 + 90 * ((candidate.score - low) / span);
      bar.style.width = `${width.toFixed(1)}%`;
      row.append(label, bar);
      candidates.appendChild(row);
    }
    details.appendChild(candidates);

    const types = document.createElement("ul");
    types.className = "type-distribution";
    for (const [name, prob] of Object.entries(meta.type_distribution)) {
      const row = document.createElement("li");
      row.className = "type";
      const label = document.createElement("span");
      label.textContent = `${name} ${(100 * prob).toFixed(1)}%`;
      const bar = document.createElement("div");
      bar.className = "bar";
      bar.style.width = `${(100 * prob).toFixed(1)}%`;
      row.append(label, bar);
      types.appendChild(row);
    }
    details.appendChild(types);
    return details;
  }
}
