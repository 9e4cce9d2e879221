"""Measurement instruments: in-feed survey scheduling, diary survey cadence,
exposure and engagement records, and the aggregate engagement report.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone

try:
    from zoneinfo import ZoneInfo
except ImportError:  # pragma: no cover
    ZoneInfo = None

from .rerank import PostPredicate, SessionState, TransformedFeed

DEFAULT_EMA_QUESTION = "Are you interested in this post?"
SURVEY_ID_PREFIX = "survey:"


@dataclass(frozen=True)
class EmaTriggerSpec:
    kind: str  # "event" | "interval" | "random"
    event_predicate: PostPredicate | None = None
    interval_n: int | None = None
    random_p: float | None = None
    question: str = DEFAULT_EMA_QUESTION
    scale: tuple[str, ...] = ("Not at all", "Slightly", "Moderately", "Very", "Extremely")
    context_window: int = 3

    def validate(self):
        params = {"event": self.event_predicate, "interval": self.interval_n,
                  "random": self.random_p}
        if self.kind not in params:
            raise ValueError(f"unknown EMA trigger kind: {self.kind!r}")
        if params[self.kind] is None:
            raise ValueError(f"EMA trigger kind {self.kind!r} is missing its parameter")
        if sum(v is not None for v in params.values()) != 1:
            raise ValueError("exactly one EMA trigger kind's parameters may be set")
        if self.kind == "interval" and self.interval_n < 1:
            raise ValueError("interval_n must be >= 1")
        if self.kind == "random" and not (0.0 <= self.random_p <= 1.0):
            raise ValueError("random_p must be in [0,1]")

    @classmethod
    def from_spec(cls, spec: dict) -> "EmaTriggerSpec":
        pred = spec.get("event_predicate")
        out = cls(
            kind=spec["kind"],
            event_predicate=PostPredicate.from_spec(pred) if pred else None,
            interval_n=spec.get("interval_n"),
            random_p=spec.get("random_p"),
            question=spec.get("question", DEFAULT_EMA_QUESTION),
            scale=tuple(spec.get("scale", cls.scale)),
            context_window=int(spec.get("context_window", 3)),
        )
        out.validate()
        return out


@dataclass(frozen=True)
class SurveyCard:
    card_id: str
    question: str
    scale: tuple[str, ...]
    context_post_ids: tuple[str, ...]


def plan_survey_insertions(feed: TransformedFeed, state: SessionState,
                           spec: EmaTriggerSpec, rng_seed: int = 0):
    """Decide where survey cards go on a delivered page.

    `state` is the session state *before* this page was consumed. Returns
    [(position, SurveyCard)] where position is the page-local insertion index
    (a card at position i appears after the i-th post). Interval cards fire
    when the cumulative consumed count crosses a multiple of interval_n;
    random placement is deterministic under (seed, participant, consumed).
    """
    spec.validate()
    posts = feed.page.posts
    if not posts:
        return []
    consumed_before = state.consumed_count
    positions: list[int] = []

    if spec.kind == "interval":
        for i in range(len(posts)):
            if (consumed_before + i + 1) % spec.interval_n == 0:
                positions.append(i + 1)
    elif spec.kind == "event":
        for i, p in enumerate(posts):
            if spec.event_predicate.matches(p):
                positions.append(i + 1)
                break
    else:  # random
        rng = random.Random(f"{rng_seed}:{state.participant_id}:{consumed_before}")
        if rng.random() < spec.random_p:
            positions.append(rng.randrange(len(posts)) + 1)

    cards = []
    for pos in positions:
        context = tuple(p.post_id for p in posts[max(0, pos - spec.context_window):pos])
        card_id = f"{SURVEY_ID_PREFIX}{state.participant_id}:{consumed_before + pos}"
        cards.append((pos, SurveyCard(card_id=card_id, question=spec.question,
                                      scale=spec.scale, context_post_ids=context)))
    return cards


# --------------------------------------------------------------------------
# Diary surveys
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SurveySchedule:
    pre_survey_ref: str | None = None
    post_survey_ref: str | None = None
    diary_cadence: str | None = None  # "daily" | "weekly"
    min_exposure_gate: int = 0

    def validate(self):
        if self.diary_cadence not in (None, "daily", "weekly"):
            raise ValueError(f"unsupported diary cadence: {self.diary_cadence!r}")
        if self.min_exposure_gate < 0:
            raise ValueError("min_exposure_gate must be >= 0")


def _local_period_key(now_ms: int, tz_name: str, cadence: str) -> str:
    tz = timezone.utc
    if ZoneInfo is not None and tz_name:
        try:
            tz = ZoneInfo(tz_name)
        except Exception:
            pass
    dt = datetime.fromtimestamp(now_ms / 1000.0, tz)
    if cadence == "weekly":
        iso = dt.isocalendar()
        return f"{iso.year}-W{iso.week:02d}"
    return dt.strftime("%Y-%m-%d")


def due_diary_surveys(schedule: SurveySchedule, timezone_name: str, now_ms: int,
                      exposure_count_since_last: int,
                      last_dispatch_period: str | None):
    """Return the period key to dispatch for, or None if nothing is due.

    Due when the local-time cadence period has rolled over since the last
    dispatch AND the exposure gate is met; callers record the returned period
    key so a second evaluation in the same period stays silent.
    """
    schedule.validate()
    if schedule.diary_cadence is None:
        return None
    period = _local_period_key(now_ms, timezone_name, schedule.diary_cadence)
    if period == last_dispatch_period:
        return None
    if exposure_count_since_last < schedule.min_exposure_gate:
        return None
    return period


# --------------------------------------------------------------------------
# Event records
# --------------------------------------------------------------------------

ENGAGEMENT_KINDS = frozenset({"like", "share", "comment", "click", "report", "dwell"})
EXPOSURE_TAGS = frozenset({"organic", "downranked", "inserted", "deferred_released",
                           "survey_card"})


@dataclass(frozen=True)
class ExposureEvent:
    participant_id: str
    session_id: str
    post_id: str
    global_position: int
    shown_at: int
    action_tag: str = "organic"
    original_position: int | None = None

    def __post_init__(self):
        if self.action_tag not in EXPOSURE_TAGS:
            raise ValueError(f"unknown exposure action tag: {self.action_tag!r}")


@dataclass(frozen=True)
class EngagementEvent:
    participant_id: str
    kind: str
    occurred_at: int
    post_id: str | None = None
    value: int = 0  # dwell milliseconds for kind="dwell"

    def __post_init__(self):
        if self.kind not in ENGAGEMENT_KINDS:
            raise ValueError(f"unknown engagement kind: {self.kind!r}")
        if self.kind == "dwell" and self.value < 0:
            raise ValueError("dwell must be >= 0")


@dataclass(frozen=True)
class SurveyResponse:
    participant_id: str
    card_id: str
    answer: str
    answered_at: int
    context_post_ids: tuple[str, ...] = ()


def event_to_dict(event) -> dict:
    d = asdict(event)
    d["event_type"] = type(event).__name__
    return d


_EVENT_TYPES = {"ExposureEvent": ExposureEvent, "EngagementEvent": EngagementEvent,
                "SurveyResponse": SurveyResponse}


def event_from_dict(d: dict):
    d = dict(d)
    cls = _EVENT_TYPES[d.pop("event_type")]
    if cls is SurveyResponse and "context_post_ids" in d:
        d["context_post_ids"] = tuple(d["context_post_ids"])
    return cls(**d)


# --------------------------------------------------------------------------
# Engagement report
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("arm", "participants", "exposures", "likes", "likes_per_1k",
                  "mean_dwell_ms", "removed", "inserted", "fallback_rate")


def engagement_report(records, arm_of: dict[str, str]) -> list[dict]:
    """Aggregate per-arm counters from a scan of the append-only event log.

    `records` is an iterable of storage EventRecord objects; `arm_of` maps
    participant_id to condition label. Deterministic for a fixed snapshot.
    """
    stats: dict[str, dict] = {}

    def row(arm):
        if arm not in stats:
            stats[arm] = {"participants": set(), "exposures": 0, "likes": 0,
                          "dwell_total": 0, "dwell_n": 0, "removed": 0,
                          "inserted": 0, "rerank": 0, "fallback": 0}
        return stats[arm]

    for rec in records:
        arm = arm_of.get(rec.participant_id, "unknown")
        r = row(arm)
        r["participants"].add(rec.participant_id)
        kind = rec.kind
        payload = rec.payload
        if kind == "exposure":
            r["exposures"] += 1
        elif kind == "engagement":
            if payload.get("kind") == "like":
                r["likes"] += 1
            elif payload.get("kind") == "dwell":
                r["dwell_total"] += payload.get("value", 0)
                r["dwell_n"] += 1
        elif kind == "action":
            if payload.get("action") == "removed":
                r["removed"] += 1
            elif payload.get("action") == "inserted":
                r["inserted"] += 1
        elif kind == "rerank":
            r["rerank"] += 1
            if payload.get("status") == "pass_through" and payload.get("fallback"):
                r["fallback"] += 1

    rows = []
    for arm in sorted(stats):
        r = stats[arm]
        rows.append({
            "arm": arm,
            "participants": len(r["participants"]),
            "exposures": r["exposures"],
            "likes": r["likes"],
            "likes_per_1k": round(1000.0 * r["likes"] / r["exposures"], 3) if r["exposures"] else 0.0,
            "mean_dwell_ms": round(r["dwell_total"] / r["dwell_n"], 3) if r["dwell_n"] else 0.0,
            "removed": r["removed"],
            "inserted": r["inserted"],
            "fallback_rate": round(r["fallback"] / r["rerank"], 4) if r["rerank"] else 0.0,
        })
    return rows
