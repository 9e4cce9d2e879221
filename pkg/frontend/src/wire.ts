/**
 * Wire types shared with the backend, plus byte-exact payload codecs.
 *
 * Feed payloads travel as base64 over the rerank round-trip; encoding and
 * decoding must round-trip the original bytes exactly so a pass-through
 * answer can be resumed byte-identically.
 */

export interface WireAttachment {
  kind: string;
  uri: string;
}

/** One post exactly as the platform serializes it; unknown keys are kept. */
export interface WirePost {
  id: string;
  author: string;
  text: string;
  created_at: number;
  likes: number;
  comments: number;
  shares: number;
  attachments: WireAttachment[];
  [extra: string]: unknown;
}

export interface FeedDoc {
  cursor: string;
  posts: WirePost[];
  [extra: string]: unknown;
}

export interface SurveyInsertion {
  position: number;
  card_id: string;
  question: string;
  scale: string[];
  context_post_ids: string[];
}

export interface Banner {
  kind: string;
  text?: string;
  [extra: string]: unknown;
}

export interface RerankWireResponse {
  status: "transformed" | "pass_through";
  payload: string; // base64
  actions_digest: unknown[];
  survey_insertions: SurveyInsertion[];
  banners: Banner[];
  study_ended: boolean;
}

export interface ParticipantConfig {
  participant_id: string;
  arm: string;
  plan_ref: string | null;
  seed: number;
  survey_schedule_ref?: string | null;
  study_end_ms?: number | null;
  [extra: string]: unknown;
}

export interface ClaimResponse {
  participant_token: string;
  config: ParticipantConfig;
}

export interface EngagementEvent {
  event_type: "EngagementEvent";
  participant_id: string;
  kind: string;
  post_id: string;
  value: number;
  occurred_at: number;
}

export interface SurveyResponseEvent {
  event_type: "SurveyResponse";
  participant_id: string;
  card_id: string;
  answer: string;
  answered_at: number;
  context_post_ids: string[];
}

export type StudyEvent = EngagementEvent | SurveyResponseEvent;

export interface SequencedEvent {
  seq: number;
  event: StudyEvent;
}

export interface EventBatchAck {
  ack_seq: number;
}

export const PROTOCOL_VERSION = "1";
export const MOCK_FORMAT_ID = "mock.v1";
export const DEFAULT_CLIENT_DEADLINE_MS = 500;

const B64_ALPHABET =
  "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

/** Encode UTF-8 text to base64 without relying on window.btoa. */
export function encodePayload(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i];
    const b1 = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const b2 = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += B64_ALPHABET[b0 >> 2];
    out += B64_ALPHABET[((b0 & 0x03) << 4) | (b1 >> 4)];
    out += i + 1 < bytes.length ? B64_ALPHABET[((b1 & 0x0f) << 2) | (b2 >> 6)] : "=";
    out += i + 2 < bytes.length ? B64_ALPHABET[b2 & 0x3f] : "=";
  }
  return out;
}

/** Decode base64 back to UTF-8 text; inverse of encodePayload. */
export function decodePayload(b64: string): string {
  const clean = b64.replace(/=+$/, "");
  const bytes: number[] = [];
  let buffer = 0;
  let bits = 0;
  for (const ch of clean) {
    const value = B64_ALPHABET.indexOf(ch);
    if (value < 0) {
      throw new Error(`invalid base64 character: ${ch}`);
    }
    buffer = (buffer << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      bytes.push((buffer >> bits) & 0xff);
    }
  }
  return new TextDecoder().decode(new Uint8Array(bytes));
}
