"""Scripted participant sessions driving the full wire protocol.

The simulator registers a cohort against the coordination endpoints, scrolls
each participant through the mock platform's paginated feed with every page
round-tripped through /v1/rerank, emits scripted engagement events, and
reports latency percentiles, per-arm counters, and the fallback rate.
"""

from __future__ import annotations

import base64
import json
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field

import httpx
import uvicorn

from .errors import BackendUnreachable

_REG_ID_RE = re.compile(r"data-registration-id='([^']+)'")


@dataclass(frozen=True)
class SessionScript:
    pages_to_fetch: int = 10
    dwell_ms_range: tuple[int, int] = (80, 400)
    like_p_by_topic: dict = field(default_factory=dict)  # topic -> probability
    default_like_p: float = 0.02
    survey_answer: str | None = "Moderately"
    ranking: str = "engagement"
    start_stagger_s: float = 0.0  # sessions begin uniformly within this window
    page_pause_s: tuple[float, float] = (0.0, 0.0)  # think time between pages
    emit_dwell: bool = True  # per-post dwell events (off for pure latency runs)

    def validate(self):
        for topic, p in self.like_p_by_topic.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"like probability for {topic!r} out of [0,1]")
        if not 0.0 <= self.default_like_p <= 1.0:
            raise ValueError("default_like_p out of [0,1]")
        if self.start_stagger_s < 0:
            raise ValueError("start_stagger_s must be >= 0")
        lo, hi = self.page_pause_s
        if lo < 0 or hi < lo:
            raise ValueError("page_pause_s must be a non-negative range")


def percentile(values, q: float) -> float:
    """Nearest-rank percentile; 0 for an empty sample."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = math.ceil(q / 100.0 * len(ordered))
    return ordered[max(0, min(len(ordered) - 1, rank - 1))]


def _drive_participant(idx, backend_url, platform_url, script, seed, topic_of,
                       client_deadline_ms, out, errors):
    rng = random.Random(f"{seed}:{idx}")
    now_ms = lambda: int(time.time() * 1000)
    if script.start_stagger_s > 0:
        time.sleep(rng.uniform(0, script.start_stagger_s))
    stats = {"arm": None, "participant_id": None, "pages": 0, "posts": 0,
             "likes": 0, "surveys": 0, "transformed": 0, "pass_through": 0,
             "client_fallbacks": 0, "platform_rtt_ms": [], "rerank_rtt_ms": []}
    try:
        with httpx.Client(timeout=10.0) as client:
            r = client.get(f"{backend_url}/reg/enter",
                           params={"recruitment_id": f"sim_{seed}_{idx}",
                                   "timezone": "UTC"})
            r.raise_for_status()
            reg_id = _REG_ID_RE.search(r.text).group(1)
            client.post(f"{backend_url}/reg/consent",
                        params={"registration_id": reg_id, "accepted": "true"}).raise_for_status()
            client.get(f"{backend_url}/reg/instructions",
                       params={"registration_id": reg_id}).raise_for_status()
            r = client.get(f"{backend_url}/v1/config")
            r.raise_for_status()
            claim = r.json()
            token = claim["participant_token"]
            stats["arm"] = claim["config"]["arm"]
            stats["participant_id"] = claim["config"]["participant_id"]

            session_id = f"sess_{seed}_{idx}"
            headers = {"x-participant-token": token}
            cursor, seq = "", 0
            events = []

            for _page in range(script.pages_to_fetch):
                t0 = time.perf_counter()
                raw = client.get(f"{platform_url}/feed",
                                 params={"cursor": cursor, "ranking": script.ranking})
                raw.raise_for_status()
                stats["platform_rtt_ms"].append((time.perf_counter() - t0) * 1000.0)
                raw_bytes = raw.content
                original_doc = json.loads(raw_bytes)

                t1 = time.perf_counter()
                delivered = raw_bytes
                survey_insertions = []
                try:
                    resp = client.post(
                        f"{backend_url}/v1/rerank", headers=headers,
                        json={"session_id": session_id, "format_id": "mock.v1",
                              "raw_payload": base64.b64encode(raw_bytes).decode(),
                              "client_deadline": client_deadline_ms},
                        timeout=client_deadline_ms / 1000.0 + 1.0)
                    resp.raise_for_status()
                    body = resp.json()
                    stats[body["status"]] += 1
                    delivered = base64.b64decode(body["payload"])
                    survey_insertions = body.get("survey_insertions", [])
                except Exception:
                    # fail-open: resume with the original platform response
                    stats["client_fallbacks"] += 1
                stats["rerank_rtt_ms"].append((time.perf_counter() - t1) * 1000.0)

                page_doc = json.loads(delivered)
                for post in page_doc["posts"]:
                    stats["posts"] += 1
                    dwell = rng.randint(*script.dwell_ms_range)
                    if script.emit_dwell:
                        events.append({"seq": seq, "event": {
                            "event_type": "EngagementEvent",
                            "participant_id": stats["participant_id"], "kind": "dwell",
                            "post_id": post["id"], "value": dwell,
                            "occurred_at": now_ms()}})
                        seq += 1
                    topic = (topic_of or {}).get(post["id"])
                    like_p = script.like_p_by_topic.get(topic, script.default_like_p)
                    if rng.random() < like_p:
                        stats["likes"] += 1
                        events.append({"seq": seq, "event": {
                            "event_type": "EngagementEvent",
                            "participant_id": stats["participant_id"], "kind": "like",
                            "post_id": post["id"], "value": 0,
                            "occurred_at": now_ms()}})
                        seq += 1
                for card in survey_insertions:
                    if script.survey_answer is None:
                        continue
                    stats["surveys"] += 1
                    events.append({"seq": seq, "event": {
                        "event_type": "SurveyResponse",
                        "participant_id": stats["participant_id"],
                        "card_id": card["card_id"], "answer": script.survey_answer,
                        "answered_at": now_ms(),
                        "context_post_ids": card.get("context_post_ids", [])}})
                    seq += 1

                if events:
                    client.post(f"{backend_url}/v1/events", headers=headers,
                                json={"session_id": session_id, "events": events,
                                      "client_sent_at": now_ms()}).raise_for_status()
                    events = []
                cursor = original_doc.get("cursor", "")
                if not cursor:
                    break
                if script.page_pause_s[1] > 0:
                    time.sleep(rng.uniform(*script.page_pause_s))
            stats["pages"] = len(stats["rerank_rtt_ms"])
    except Exception as e:
        errors.append((idx, repr(e)))
    out[idx] = stats


def run_simulation(backend_url: str, platform_url: str, cohort_size: int,
                   script: SessionScript | None = None, seed: int = 0,
                   topic_of: dict | None = None,
                   client_deadline_ms: float = 500.0) -> dict:
    """Drive cohort_size concurrent scripted sessions end to end.

    Deterministic under a fixed seed except for the wall-clock latency figures.
    """
    script = script or SessionScript()
    script.validate()
    try:
        httpx.get(f"{backend_url}/healthz", timeout=5.0).raise_for_status()
    except Exception as e:
        raise BackendUnreachable(str(e)) from e

    out: dict[int, dict] = {}
    errors: list = []
    threads = [threading.Thread(target=_drive_participant,
                                args=(i, backend_url, platform_url, script, seed,
                                      topic_of, client_deadline_ms, out, errors))
               for i in range(cohort_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise BackendUnreachable(f"{len(errors)} session(s) failed: {errors[:3]}")

    per_arm: dict[str, dict] = {}
    platform_rtt, rerank_rtt = [], []
    for stats in out.values():
        platform_rtt.extend(stats["platform_rtt_ms"])
        rerank_rtt.extend(stats["rerank_rtt_ms"])
        arm = stats["arm"] or "unknown"
        a = per_arm.setdefault(arm, {"participants": 0, "pages": 0, "posts": 0,
                                     "likes": 0, "surveys": 0, "transformed": 0,
                                     "pass_through": 0, "client_fallbacks": 0})
        a["participants"] += 1
        for k in ("pages", "posts", "likes", "surveys", "transformed",
                  "pass_through", "client_fallbacks"):
            a[k] += stats[k]

    total_pages = sum(a["pages"] for a in per_arm.values())
    total_fallback = sum(a["pass_through"] + a["client_fallbacks"] for a in per_arm.values())
    added = rerank_rtt  # latency the round-trip adds on top of the platform fetch
    return {
        "cohort_size": cohort_size,
        "seed": seed,
        "per_arm": {arm: per_arm[arm] for arm in sorted(per_arm)},
        "requests": total_pages,
        "fallback_rate": round(total_fallback / total_pages, 4) if total_pages else 0.0,
        "latency_ms": {
            "platform_p50": round(percentile(platform_rtt, 50), 2),
            "platform_p95": round(percentile(platform_rtt, 95), 2),
            "platform_p99": round(percentile(platform_rtt, 99), 2),
            "added_p50": round(percentile(added, 50), 2),
            "added_p95": round(percentile(added, 95), 2),
            "added_p99": round(percentile(added, 99), 2),
        },
        "participants": {stats["participant_id"]: stats["arm"]
                         for stats in out.values()},
    }


def format_report(report: dict) -> str:
    lines = [f"cohort={report['cohort_size']} seed={report['seed']} "
             f"requests={report['requests']} fallback_rate={report['fallback_rate']}"]
    lat = report["latency_ms"]
    lines.append(f"latency added (ms): p50={lat['added_p50']} p95={lat['added_p95']} "
                 f"p99={lat['added_p99']}  platform p95={lat['platform_p95']}")
    header = f"{'arm':<14}{'n':>4}{'pages':>7}{'posts':>7}{'likes':>7}{'surveys':>9}" \
             f"{'transformed':>13}{'pass_through':>14}"
    lines.append(header)
    for arm, a in report["per_arm"].items():
        lines.append(f"{arm:<14}{a['participants']:>4}{a['pages']:>7}{a['posts']:>7}"
                     f"{a['likes']:>7}{a['surveys']:>9}{a['transformed']:>13}"
                     f"{a['pass_through']:>14}")
    return "\n".join(lines)


class AppServer:
    """Run an ASGI app on an ephemeral localhost port in a daemon thread."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0):
        self._config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.host = host

    def start(self, timeout_s: float = 10.0) -> str:
        self._thread.start()
        deadline = time.monotonic() + timeout_s
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server failed to start")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        self.url = f"http://{self.host}:{sock.getsockname()[1]}"
        return self.url

    def stop(self):
        self._server.should_exit = True
        self._thread.join(timeout=10.0)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
