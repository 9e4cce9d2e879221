/**
 * Persistent client state: participant identity, consumed-count mirror,
 * kill switch, and the durable event buffer backing store.
 *
 * Storage is injected as a tiny string key/value interface so the same
 * code runs on extension storage, localStorage, or an in-memory map in
 * tests. Everything is persisted on each mutation so buffered events and
 * session counters survive a page reload.
 */

import type { ParticipantConfig, SequencedEvent, StudyEvent } from "./wire.js";

export interface KVStore {
  get(key: string): string | null;
  set(key: string, value: string): void;
  remove(key: string): void;
}

export class MemoryStore implements KVStore {
  private map = new Map<string, string>();
  get(key: string): string | null {
    return this.map.get(key) ?? null;
  }
  set(key: string, value: string): void {
    this.map.set(key, value);
  }
  remove(key: string): void {
    this.map.delete(key);
  }
}

const STATE_KEY = "feedlab.client_state";

interface PersistedState {
  participant_token: string | null;
  config: ParticipantConfig | null;
  buffer: SequencedEvent[];
  next_seq: number;
  session_id: string;
  kill_switch: boolean;
}

function blankState(): PersistedState {
  return {
    participant_token: null,
    config: null,
    buffer: [],
    next_seq: 0,
    session_id: `ext_${Date.now().toString(36)}`,
    kill_switch: false,
  };
}

export class ClientState {
  private state: PersistedState;

  constructor(private store: KVStore) {
    const raw = store.get(STATE_KEY);
    this.state = raw ? (JSON.parse(raw) as PersistedState) : blankState();
  }

  private persist(): void {
    this.store.set(STATE_KEY, JSON.stringify(this.state));
  }

  get participantToken(): string | null {
    return this.state.participant_token;
  }

  get config(): ParticipantConfig | null {
    return this.state.config;
  }

  get sessionId(): string {
    return this.state.session_id;
  }

  get killSwitch(): boolean {
    return this.state.kill_switch;
  }

  /** Interception runs only with a claimed config and no kill switch. */
  get active(): boolean {
    return this.state.config !== null && !this.state.kill_switch;
  }

  setClaim(token: string, config: ParticipantConfig): void {
    this.state.participant_token = token;
    this.state.config = config;
    this.persist();
  }

  /** The study-ended flag is permanent: interception never resumes. */
  engageKillSwitch(): void {
    this.state.kill_switch = true;
    this.persist();
  }

  /**
   * Buffer one event for delivery; consent gate — events from before the
   * config claim are dropped, never stored.
   */
  bufferEvent(event: StudyEvent): boolean {
    if (this.state.config === null) {
      return false;
    }
    this.state.buffer.push({ seq: this.state.next_seq, event });
    this.state.next_seq += 1;
    this.persist();
    return true;
  }

  get bufferedEvents(): SequencedEvent[] {
    return [...this.state.buffer];
  }

  /** Drop every buffered event with seq <= ackSeq (delivery confirmed). */
  acknowledge(ackSeq: number): void {
    this.state.buffer = this.state.buffer.filter((e) => e.seq > ackSeq);
    this.persist();
  }
}
