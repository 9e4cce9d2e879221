/**
 * Content-script core: claim handshake, the rerank round-trip with its
 * client deadline, local-mode transforms, and event buffering.
 *
 * Pure of browser APIs: fetch, storage, and clock come in through the
 * constructor so the same logic is exercised end-to-end in tests.
 */

import { listenForIntercepted, type BridgeMessage, type MessageBus } from "./bridge.js";
import { EventFlusher } from "./buffer.js";
import { ClientState, type KVStore } from "./state.js";
import { applyTransform, freshState, type PlanDoc, type TransformState } from "./transform.js";
import { scorePage } from "./scoring.js";
import {
  DEFAULT_CLIENT_DEADLINE_MS,
  PROTOCOL_VERSION,
  decodePayload,
  encodePayload,
  type Banner,
  type ClaimResponse,
  type FeedDoc,
  type RerankWireResponse,
  type StudyEvent,
  type SurveyInsertion,
} from "./wire.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClaimOutcome {
  status: "claimed" | "no_persistent_entry" | "not_consented" | "error";
  recovery?: string;
}

export interface RerankOutcome {
  payload: string;
  status: "transformed" | "pass_through" | "client_fallback" | "off";
  surveyInsertions: SurveyInsertion[];
  banners: Banner[];
}

export interface ClientOptions {
  backendUrl: string;
  deadlineMs?: number;
  /** When set, matching pages are transformed in-extension, no backend call. */
  localPlan?: PlanDoc | null;
}

export class FeedlabClient {
  readonly state: ClientState;
  readonly flusher: EventFlusher;
  private deadlineMs: number;
  private localPlan: PlanDoc | null;
  private localState: TransformState = freshState();

  constructor(
    store: KVStore,
    private fetchImpl: FetchLike,
    private options: ClientOptions,
  ) {
    this.state = new ClientState(store);
    this.deadlineMs = options.deadlineMs ?? DEFAULT_CLIENT_DEADLINE_MS;
    this.localPlan = options.localPlan ?? null;
    this.flusher = new EventFlusher(
      this.state,
      options.backendUrl,
      async (url, body, headers) => {
        const resp = await this.fetchImpl(url, {
          method: "POST",
          headers: { "content-type": "application/json", ...headers },
          body: JSON.stringify(body),
        });
        if (!resp.ok) {
          throw new Error(`event flush failed: ${resp.status}`);
        }
        return resp.json();
      },
    );
  }

  /**
   * Post-install handshake: claim the participant config via the
   * persistent entry. Idempotent — the server answers the same identity
   * for repeated claims.
   */
  async claim(): Promise<ClaimOutcome> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.options.backendUrl}/v1/config`, {
        method: "GET",
        credentials: "include",
      });
    } catch {
      return { status: "error" };
    }
    if (resp.status === 404) {
      const body = (await resp.json()) as { recovery?: string };
      return { status: "no_persistent_entry", recovery: body.recovery };
    }
    if (resp.status === 403) {
      return { status: "not_consented" };
    }
    if (!resp.ok) {
      return { status: "error" };
    }
    const claim = (await resp.json()) as ClaimResponse;
    this.state.setClaim(claim.participant_token, claim.config);
    return { status: "claimed" };
  }

  /**
   * Handle one intercepted feed payload. Server mode round-trips to the
   * backend under the client deadline; local mode applies the plan
   * in-extension. Every failure path returns the original text.
   */
  async handlePayload(rawText: string, formatId: string): Promise<RerankOutcome> {
    if (!this.state.active) {
      return { payload: rawText, status: "off", surveyInsertions: [], banners: [] };
    }
    if (this.localPlan) {
      return this.handleLocally(rawText);
    }
    return this.handleViaBackend(rawText, formatId);
  }

  private handleLocally(rawText: string): RerankOutcome {
    try {
      const doc = JSON.parse(rawText) as FeedDoc;
      const plan = this.localPlan as PlanDoc;
      const scores = plan.scorer?.terms
        ? scorePage(doc.posts, plan.scorer.terms)
        : {};
      const result = applyTransform(doc, this.localState, plan, scores);
      this.localState = result.state;
      return {
        payload: JSON.stringify(result.page),
        status: "transformed",
        surveyInsertions: [],
        banners: [],
      };
    } catch {
      return {
        payload: rawText,
        status: "client_fallback",
        surveyInsertions: [],
        banners: [],
      };
    }
  }

  private async handleViaBackend(
    rawText: string,
    formatId: string,
  ): Promise<RerankOutcome> {
    const token = this.state.participantToken;
    if (token === null) {
      return { payload: rawText, status: "off", surveyInsertions: [], banners: [] };
    }
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), this.deadlineMs);
    try {
      const resp = await this.fetchImpl(`${this.options.backendUrl}/v1/rerank`, {
        method: "POST",
        headers: {
          "content-type": "application/json",
          "x-participant-token": token,
        },
        body: JSON.stringify({
          protocol_version: PROTOCOL_VERSION,
          session_id: this.state.sessionId,
          format_id: formatId,
          raw_payload: encodePayload(rawText),
          client_deadline: this.deadlineMs,
        }),
        signal: controller.signal,
      });
      if (!resp.ok) {
        throw new Error(`rerank failed: ${resp.status}`);
      }
      const body = (await resp.json()) as RerankWireResponse;
      if (body.study_ended) {
        this.state.engageKillSwitch();
      }
      return {
        payload: decodePayload(body.payload),
        status: body.status,
        surveyInsertions: body.survey_insertions ?? [],
        banners: body.banners ?? [],
      };
    } catch {
      // deadline miss or backend fault: resume with the original response
      this.bufferEvent({
        event_type: "EngagementEvent",
        participant_id: this.state.config?.participant_id ?? "",
        kind: "client_fallback",
        post_id: "",
        value: 0,
        occurred_at: Date.now(),
      });
      return {
        payload: rawText,
        status: "client_fallback",
        surveyInsertions: [],
        banners: [],
      };
    } finally {
      clearTimeout(timer);
    }
  }

  bufferEvent(event: StudyEvent): boolean {
    return this.state.bufferEvent(event);
  }

  bufferSurveyAnswer(cardId: string, answer: string, contextPostIds: string[]): boolean {
    return this.bufferEvent({
      event_type: "SurveyResponse",
      participant_id: this.state.config?.participant_id ?? "",
      card_id: cardId,
      answer,
      answered_at: Date.now(),
      context_post_ids: contextPostIds,
    });
  }

  /** Wire the message bus so intercepted payloads flow through this client. */
  attachBridge(bus: MessageBus): () => void {
    return listenForIntercepted(bus, async (msg: BridgeMessage) => {
      const outcome = await this.handlePayload(
        msg.payload ?? "",
        msg.format_id ?? "mock.v1",
      );
      this.lastOutcome = outcome;
      return outcome.payload;
    });
  }

  /** Most recent rerank outcome; the widget layer reads cards/banners here. */
  lastOutcome: RerankOutcome | null = null;
}
