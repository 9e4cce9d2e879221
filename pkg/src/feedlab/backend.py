"""Request-path backend: the rerank round-trip and event ingestion.

The contract is fail-open: any fault on the rerank path (bad payload, scorer
timeout, plan error) answers pass_through with the original bytes, so the
participant's feed degrades to observation and never to breakage.
"""

from __future__ import annotations

import base64
import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

from . import measurement
from .coordination import CoordinationService
from .errors import AuthFailed, FeedlabError
from .measurement import ExposureEvent, event_from_dict, plan_survey_insertions
from .model import parse_feed_payload, serialize_feed_payload
from .rerank import SessionState, TransformPlan, apply_transform, end_session
from .scoring import ScoreCache, ScoreResult, score_posts

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "1"
DEFAULT_SERVER_BUDGET_MS = 300.0
DEFAULT_CLIENT_DEADLINE_MS = 500.0


@dataclass
class RerankRequest:
    participant_token: str
    session_id: str
    format_id: str
    raw_payload: bytes
    client_deadline_ms: float = DEFAULT_CLIENT_DEADLINE_MS
    protocol_version: str = PROTOCOL_VERSION

    @classmethod
    def from_wire(cls, doc: dict) -> "RerankRequest":
        return cls(
            participant_token=doc["participant_token"],
            session_id=doc["session_id"],
            format_id=doc.get("format_id", "mock.v1"),
            raw_payload=base64.b64decode(doc["raw_payload"]),
            client_deadline_ms=float(doc.get("client_deadline", DEFAULT_CLIENT_DEADLINE_MS)),
            protocol_version=str(doc.get("protocol_version", PROTOCOL_VERSION)),
        )


@dataclass
class RerankResponse:
    status: str  # "transformed" | "pass_through"
    payload: bytes
    actions_digest: list = field(default_factory=list)
    survey_insertions: list = field(default_factory=list)
    banners: list = field(default_factory=list)
    study_ended: bool = False

    def to_wire(self) -> dict:
        return {
            "status": self.status,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "actions_digest": self.actions_digest,
            "survey_insertions": self.survey_insertions,
            "banners": self.banners,
            "study_ended": self.study_ended,
        }


class Backend:
    def __init__(self, coordination: CoordinationService, plans: dict[str, TransformPlan],
                 event_log, pool=None, clock=None,
                 server_budget_ms: float = DEFAULT_SERVER_BUDGET_MS,
                 survey_schedules: dict | None = None, seed: int = 0):
        self.coordination = coordination
        self.plans = plans
        self.log = event_log
        self.pool = pool
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.server_budget_ms = server_budget_ms
        self.survey_schedules = survey_schedules or {}
        self.seed = seed
        self.score_cache = ScoreCache()
        self.sessions: dict[tuple, SessionState] = {}
        self._session_locks = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._seen_seq: set[tuple] = set()
        self._last_seq: dict[tuple, int] = {}
        self._diary_state: dict[str, dict] = {}  # participant -> {period, exposures_since}
        self._rebuild_ingest_state()

    def _rebuild_ingest_state(self):
        for rec in self.log.scan(include_tombstoned=True):
            seq = rec.payload.get("seq")
            session_id = rec.payload.get("session_id")
            if seq is None or session_id is None:
                continue
            key = (rec.participant_id, session_id)
            self._seen_seq.add((rec.participant_id, session_id, seq))
            self._last_seq[key] = max(self._last_seq.get(key, -1), seq)

    def _session_lock(self, key):
        with self._locks_guard:
            return self._session_locks[key]

    # -- rerank path --------------------------------------------------------

    def handle_rerank(self, req: RerankRequest) -> RerankResponse:
        started = time.monotonic()
        cfg = self.coordination.resolve_token(req.participant_token)
        if cfg is None:
            raise AuthFailed("unknown or unconsented participant token")

        key = (cfg.participant_id, req.session_id)
        with self._session_lock(key):
            try:
                return self._rerank_locked(req, cfg, key, started)
            except Exception as e:
                log.warning("rerank fell back: %s", e)
                self._record_rerank(cfg, req.session_id, "pass_through", started,
                                    fallback=True, reason=str(e))
                return RerankResponse(status="pass_through", payload=req.raw_payload)

    def _rerank_locked(self, req, cfg, key, started) -> RerankResponse:
        if self.coordination.study_ended(self.clock()):
            self._record_rerank(cfg, req.session_id, "pass_through", started,
                                reason="study_ended")
            return RerankResponse(status="pass_through", payload=req.raw_payload,
                                  study_ended=True,
                                  banners=[{"kind": "study_end",
                                            "text": "The study has ended. Please uninstall "
                                                    "the extension; thank you for taking part."}])
        if req.protocol_version != PROTOCOL_VERSION:
            self._record_rerank(cfg, req.session_id, "pass_through", started,
                                reason="unknown_protocol_version")
            return RerankResponse(status="pass_through", payload=req.raw_payload)

        state = self.sessions.get(key) or SessionState(participant_id=cfg.participant_id)

        if cfg.plan_ref is None:  # control arm: observe, never transform
            try:
                page = parse_feed_payload(req.raw_payload, req.format_id)
            except FeedlabError:
                page = None
            if page is not None:
                self._log_exposures(cfg, req.session_id, page.posts, state.consumed_count, {})
                self.sessions[key] = SessionState(cfg.participant_id,
                                                  state.consumed_count + len(page.posts),
                                                  state.deferred, state.next_seq)
            self._record_rerank(cfg, req.session_id, "pass_through", started,
                                reason="control_arm")
            return RerankResponse(status="pass_through", payload=req.raw_payload,
                                  banners=self._diary_banners(cfg))

        page = parse_feed_payload(req.raw_payload, req.format_id)
        plan = self.plans[cfg.plan_ref]

        deadline = min(self.server_budget_ms, req.client_deadline_ms)
        deadline -= (time.monotonic() - started) * 1000.0
        if plan.scorer is not None:
            scores = score_posts(page.posts, plan.scorer, max(1.0, deadline),
                                 cache=self.score_cache)
        else:
            scores = ScoreResult()
        if scores.fallback:
            self._record_rerank(cfg, req.session_id, "pass_through", started,
                                fallback=True, reason="scorer_fallback")
            return RerankResponse(status="pass_through", payload=req.raw_payload)

        candidates = ()
        if plan.insertions is not None and self.pool is not None:
            candidates = self.pool.take(len(plan.insertions.positions))

        pre_state = state
        transformed, new_state = apply_transform(page, state, plan, scores,
                                                 candidates=candidates)

        # feed the transfer pool with posts that left this participant's feed
        if self.pool is not None:
            for a in transformed.actions:
                if a.action == "removed" and a.post is not None:
                    self.pool.offer_transfer(a.post, origin_session=req.session_id)

        survey_cards = []
        if plan.ema is not None:
            survey_cards = plan_survey_insertions(transformed, pre_state, plan.ema,
                                                  rng_seed=self.seed)

        payload = serialize_feed_payload(transformed.page, req.format_id)

        action_tag = {}
        for a in transformed.actions:
            if a.action in ("downranked", "inserted", "deferred_released") \
                    and a.new_position is not None:
                action_tag[a.post_id] = a.action
        self._log_exposures(cfg, req.session_id, transformed.page.posts,
                            pre_state.consumed_count, action_tag,
                            original_positions={a.post_id: a.original_position
                                                for a in transformed.actions
                                                if a.original_position is not None})
        now = self.clock()
        rows = []
        for pos, card in survey_cards:
            rows.append(("exposure", cfg.participant_id, {
                "session_id": req.session_id, "post_id": card.card_id,
                "global_position": pre_state.consumed_count + pos, "shown_at": now,
                "action_tag": "survey_card",
                "context_post_ids": list(card.context_post_ids),
            }))
        for a in transformed.actions:
            rows.append(("action", cfg.participant_id, {
                "session_id": req.session_id, "action": a.action, "post_id": a.post_id,
                "original_position": a.original_position, "new_position": a.new_position,
                "deferred_target": a.deferred_target, "fallback": a.fallback,
            }))
        self.log.append_batch_nowait(rows)

        self.sessions[key] = new_state
        self._record_rerank(cfg, req.session_id, "transformed", started)
        digest = [{"post_id": a.post_id, "action": a.action,
                   "original_position": a.original_position,
                   "new_position": a.new_position,
                   "deferred_target": a.deferred_target}
                  for a in transformed.actions]
        return RerankResponse(
            status="transformed", payload=payload, actions_digest=digest,
            survey_insertions=[{"position": pos, "card_id": card.card_id,
                                "question": card.question, "scale": list(card.scale),
                                "context_post_ids": list(card.context_post_ids)}
                               for pos, card in survey_cards],
            banners=self._diary_banners(cfg),
        )

    def _log_exposures(self, cfg, session_id, posts, consumed_before, action_tag,
                       original_positions=None):
        now = self.clock()
        original_positions = original_positions or {}
        rows = []
        for i, p in enumerate(posts):
            event = ExposureEvent(
                participant_id=cfg.participant_id, session_id=session_id,
                post_id=p.post_id, global_position=consumed_before + i,
                shown_at=now, action_tag=action_tag.get(p.post_id, "organic"),
                original_position=original_positions.get(p.post_id),
            )
            rows.append(("exposure", cfg.participant_id, {
                "session_id": event.session_id, "post_id": event.post_id,
                "global_position": event.global_position, "shown_at": event.shown_at,
                "action_tag": event.action_tag,
                "original_position": event.original_position,
            }))
        self.log.append_batch_nowait(rows)
        diary = self._diary_state.setdefault(cfg.participant_id,
                                             {"period": None, "exposures_since": 0})
        diary["exposures_since"] += len(posts)

    def _diary_banners(self, cfg):
        schedule = self.survey_schedules.get(cfg.survey_schedule_ref)
        if schedule is None:
            return []
        diary = self._diary_state.setdefault(cfg.participant_id,
                                             {"period": None, "exposures_since": 0})
        period = measurement.due_diary_surveys(
            schedule, cfg.timezone, self.clock(),
            diary["exposures_since"], diary["period"])
        if period is None:
            return []
        diary["period"] = period
        diary["exposures_since"] = 0
        self.log.append("action", cfg.participant_id,
                        {"action": "diary_dispatch", "period": period})
        return [{"kind": "diary_survey", "period": period,
                 "survey_ref": schedule.post_survey_ref or "diary"}]

    def _record_rerank(self, cfg, session_id, status, started, fallback=False, reason=None):
        self.log.append_batch_nowait([("rerank", cfg.participant_id, {
            "session_id": session_id, "status": status, "fallback": fallback,
            "reason": reason,
            "handling_ms": round((time.monotonic() - started) * 1000.0, 3),
        })])

    def end_session(self, participant_token: str, session_id: str):
        """Close a scripted or live session; expired deferred posts are logged."""
        cfg = self.coordination.resolve_token(participant_token)
        if cfg is None:
            raise AuthFailed("unknown participant token")
        key = (cfg.participant_id, session_id)
        with self._session_lock(key):
            state = self.sessions.get(key)
            if state is None:
                return []
            actions, cleared = end_session(state)
            for a in actions:
                self.log.append("action", cfg.participant_id, {
                    "session_id": session_id, "action": "expired",
                    "post_id": a.post_id, "deferred_target": a.deferred_target,
                })
            self.sessions[key] = cleared
            return list(actions)

    # -- event ingestion ----------------------------------------------------

    def ingest_event_batch(self, batch: dict) -> dict:
        """Persist a client event batch append-only and idempotently.

        batch: {"participant_token", "session_id", "events":
                [{"seq": int, "event": {...}}], "client_sent_at"}
        Returns {"ack_seq": highest accepted sequence}.
        """
        cfg = self.coordination.resolve_token(batch.get("participant_token"))
        if cfg is None:
            raise AuthFailed("unknown participant token")
        session_id = batch.get("session_id", "default")
        key = (cfg.participant_id, session_id)
        highest = self._last_seq.get(key, -1)
        last = highest
        rows, accepted = [], []
        for item in batch.get("events", ()):
            seq = int(item["seq"])
            dedup = (cfg.participant_id, session_id, seq)
            if dedup in self._seen_seq:
                highest = max(highest, seq)
                continue
            event = event_from_dict(item["event"])
            kind = {"ExposureEvent": "exposure", "EngagementEvent": "engagement",
                    "SurveyResponse": "survey_response"}[type(event).__name__]
            payload = measurement.event_to_dict(event)
            payload.pop("event_type")
            payload.pop("participant_id", None)
            payload["seq"] = seq
            payload["session_id"] = payload.get("session_id", session_id)
            if seq > last + 1:
                rows.append(("ingest", cfg.participant_id,
                             {"session_id": session_id, "gap_after": last,
                              "next_seq": seq}))
            rows.append((kind, cfg.participant_id, payload))
            accepted.append(dedup)
            last = max(last, seq)
            highest = max(highest, seq)
        # one durable group commit, then acknowledge the whole batch
        self.log.append_batch(rows)
        self._seen_seq.update(accepted)
        self._last_seq[key] = last
        return {"ack_seq": highest}
