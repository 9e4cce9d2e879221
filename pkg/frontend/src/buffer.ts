/**
 * At-least-once event delivery: flush the durable buffer to the backend's
 * batch endpoint and drop only what the server acknowledged.
 *
 * The server deduplicates on (session, seq), so resending a batch after a
 * lost acknowledgment is safe. Flushing runs as a background loop
 * decoupled from interception.
 */

import type { ClientState } from "./state.js";
import type { EventBatchAck } from "./wire.js";

export type PostJson = (
  url: string,
  body: unknown,
  headers: Record<string, string>,
) => Promise<unknown>;

export class EventFlusher {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private state: ClientState,
    private backendUrl: string,
    private postJson: PostJson,
  ) {}

  /** One flush attempt; returns the number of events acknowledged. */
  async flushOnce(): Promise<number> {
    const events = this.state.bufferedEvents;
    const token = this.state.participantToken;
    if (events.length === 0 || token === null) {
      return 0;
    }
    let ack: EventBatchAck;
    try {
      ack = (await this.postJson(
        `${this.backendUrl}/v1/events`,
        {
          session_id: this.state.sessionId,
          events,
          client_sent_at: Date.now(),
        },
        { "x-participant-token": token },
      )) as EventBatchAck;
    } catch {
      return 0; // keep everything buffered; the next attempt retries
    }
    if (typeof ack?.ack_seq !== "number") {
      return 0;
    }
    const before = events.length;
    this.state.acknowledge(ack.ack_seq);
    return before - this.state.bufferedEvents.length;
  }

  start(intervalMs = 5000): void {
    if (this.timer !== null) {
      return;
    }
    this.timer = setInterval(() => {
      void this.flushOnce();
    }, intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
