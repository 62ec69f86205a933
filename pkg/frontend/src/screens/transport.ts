import { FeedStatus, TransportFeed } from "../feed.js";
import type { TransportNotice } from "../types.js";

export interface BoardState {
  notices: TransportNotice[];
  status: FeedStatus;
  cursor: string | null; // last event id, survives reconnects
}

/** Transporter dashboard: live match notices, newest first, deduplicated. */
export class TransportBoard {
  state: BoardState = { notices: [], status: "connecting", cursor: null };
  private feed: TransportFeed;
  private seen = new Set<string>();
  private listeners: Array<(s: BoardState) => void> = [];
  private running: Promise<void> | null = null;

  constructor(
    baseUrl: string,
    token: string,
    opts: { lastEventId?: string; fetch?: typeof fetch; reconnectDelayMs?: number } = {},
  ) {
    this.feed = new TransportFeed(baseUrl, token, {
      ...opts,
      onNotice: (n, id) => this.take(n, id),
      onStatus: (s) => this.emit({ status: s, cursor: this.feed.lastEventId }),
    });
  }

  onChange(fn: (s: BoardState) => void): void {
    this.listeners.push(fn);
  }

  private emit(patch: Partial<BoardState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }

  private take(notice: TransportNotice, id: string): void {
    if (this.seen.has(notice.noticeId)) return; // replay overlap after resume
    this.seen.add(notice.noticeId);
    this.emit({ notices: [notice, ...this.state.notices], cursor: id || this.feed.lastEventId });
  }

  start(): void {
    this.running ??= this.feed.start();
  }

  async stop(): Promise<void> {
    this.feed.stop();
    await this.running;
    this.running = null;
  }
}
