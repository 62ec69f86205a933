import type { TransportNotice } from "./types.js";

export interface SseEvent {
  id?: string;
  event?: string;
  data: string;
}

/** Incremental SSE frame parser; feed it decoded chunks as they arrive. */
export class SseParser {
  private buf = "";

  push(chunk: string): SseEvent[] {
    this.buf += chunk.replace(/\r\n/g, "\n");
    const frames: SseEvent[] = [];
    for (;;) {
      const cut = this.buf.indexOf("\n\n");
      if (cut < 0) break;
      const raw = this.buf.slice(0, cut);
      this.buf = this.buf.slice(cut + 2);
      const ev: SseEvent = { data: "" };
      const dataLines: string[] = [];
      for (const line of raw.split("\n")) {
        if (!line || line.startsWith(":")) continue; // keep-alive comments
        const sep = line.indexOf(":");
        const field = sep < 0 ? line : line.slice(0, sep);
        let value = sep < 0 ? "" : line.slice(sep + 1);
        if (value.startsWith(" ")) value = value.slice(1);
        if (field === "id") ev.id = value;
        else if (field === "event") ev.event = value;
        else if (field === "data") dataLines.push(value);
      }
      ev.data = dataLines.join("\n");
      if (ev.id !== undefined || ev.event !== undefined || ev.data) frames.push(ev);
    }
    return frames;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export type FeedStatus = "connecting" | "live" | "closed" | "error";

export interface FeedOptions {
  lastEventId?: string;
  reconnect?: boolean; // default true; retry after stream end or error
  reconnectDelayMs?: number;
  fetch?: FetchLike;
  onNotice: (notice: TransportNotice, id: string) => void;
  onStatus?: (status: FeedStatus, err?: unknown) => void;
}

/**
 * Match-notice stream over the gateway's SSE endpoint.
 *
 * Uses fetch streaming rather than EventSource so the bearer token can ride
 * in a header. Tracks the last seen event id (a `block.txIndex` cursor) and
 * sends it as Last-Event-ID on reconnect, so nothing committed while the
 * console was offline is missed.
 */
export class TransportFeed {
  lastEventId: string | null;
  private stopped = false;
  private abort: AbortController | null = null;
  private fetchImpl: FetchLike;

  constructor(
    private baseUrl: string,
    private token: string,
    private opts: FeedOptions,
  ) {
    this.lastEventId = opts.lastEventId ?? null;
    this.fetchImpl = opts.fetch ?? ((input, init) => fetch(input, init));
  }

  /** Runs until stop(); resolves once the feed is shut down. */
  async start(): Promise<void> {
    const delay = this.opts.reconnectDelayMs ?? 1000;
    while (!this.stopped) {
      try {
        await this.connectOnce();
        if (this.opts.reconnect === false) break;
      } catch (err) {
        if (this.stopped) break;
        this.opts.onStatus?.("error", err);
        if (this.opts.reconnect === false) throw err;
      }
      if (!this.stopped) await new Promise((r) => setTimeout(r, delay));
    }
    this.opts.onStatus?.("closed");
  }

  stop(): void {
    this.stopped = true;
    this.abort?.abort();
  }

  private async connectOnce(): Promise<void> {
    this.opts.onStatus?.("connecting");
    this.abort = new AbortController();
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.token}`,
      Accept: "text/event-stream",
    };
    if (this.lastEventId) headers["Last-Event-ID"] = this.lastEventId;
    const resp = await this.fetchImpl(`${this.baseUrl}/events/transport`, {
      headers,
      signal: this.abort.signal,
    });
    if (!resp.ok || !resp.body) {
      throw new Error(`transport feed: HTTP ${resp.status}`);
    }
    this.opts.onStatus?.("live");
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return; // server closed; caller decides whether to reconnect
      for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
        if (frame.id) this.lastEventId = frame.id;
        if (frame.event === "transport" && frame.data) {
          this.opts.onNotice(JSON.parse(frame.data) as TransportNotice, frame.id ?? "");
        }
      }
    }
  }
}
