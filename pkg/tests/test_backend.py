import base64

import pytest

from feedlab.backend import Backend, RerankRequest
from feedlab.coordination import CoordinationService, StudyConfig
from feedlab.errors import AuthFailed
from feedlab.measurement import EmaTriggerSpec
from feedlab.model import MOCK_FORMAT_ID, serialize_feed_payload
from feedlab.rerank import (InsertionPlan, OffsetPolicy, PostPredicate,
                            TargetRule, TransformPlan)
from feedlab.scoring import Scorer
from feedlab.sourcing import CandidatePool, CandidatePost
from feedlab.storage import EventLog, Registry

from .conftest import make_page, make_post, video

PLAN = TransformPlan(
    plan_id="downrank-political",
    target_rule=TargetRule(threshold=0.5),
    downrank=OffsetPolicy(kind="fixed", fixed_offset=2),
    scorer=Scorer(kind="keyword", terms={"politics": 1.0}),
)


def build(tmp_path, plan=PLAN, arms=None, pool=None, study_end_ms=None,
          server_budget_ms=300.0, ema=None, seed=5):
    if ema is not None:
        plan = TransformPlan(**{**plan.__dict__, "ema": ema})
    arms = arms or [("treatment", 1.0)]
    study = StudyConfig(arms=arms,
                        plan_ref_by_arm={"treatment": plan.plan_id, "control": None},
                        seed=seed, study_end_ms=study_end_ms)
    coord = CoordinationService(Registry(tmp_path / "registry.json"), study)
    log = EventLog(tmp_path / "log")
    backend = Backend(coord, {plan.plan_id: plan}, log, pool=pool,
                      server_budget_ms=server_budget_ms, seed=seed)
    return backend


def enroll(backend, recruitment_id="r1"):
    coord = backend.coordination
    reg_id, entry, _ = coord.begin_registration({"recruitment_id": recruitment_id})
    coord.record_consent(reg_id, accepted=True)
    token, cfg = coord.claim_config(entry)
    return token, cfg


def rerank(backend, token, page, session="s1", deadline=500.0, version="1"):
    payload = serialize_feed_payload(page, MOCK_FORMAT_ID)
    req = RerankRequest(participant_token=token, session_id=session,
                        format_id=MOCK_FORMAT_ID, raw_payload=payload,
                        client_deadline_ms=deadline, protocol_version=version)
    return payload, backend.handle_rerank(req)


def decode_ids(resp):
    import json
    doc = json.loads(resp.payload)
    return [p["id"] for p in doc["posts"]]


def test_transform_round_trip(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    page = make_page(5)
    posts = list(page.posts)
    posts[2] = make_post("p2", text="politics rally")
    page = page.with_posts(posts)
    _, resp = rerank(backend, token, page)
    assert resp.status == "transformed"
    assert decode_ids(resp) == ["p0", "p1", "p3", "p4", "p2"]
    assert resp.actions_digest == [{"post_id": "p2", "action": "downranked",
                                    "original_position": 2, "new_position": 4,
                                    "deferred_target": None}]


def test_bad_token_raises(tmp_path):
    backend = build(tmp_path)
    with pytest.raises(AuthFailed):
        rerank(backend, "bogus", make_page(2))


def test_malformed_payload_passes_through(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    raw = b"\xff\xfenot json at all"
    req = RerankRequest(participant_token=token, session_id="s1",
                        format_id=MOCK_FORMAT_ID, raw_payload=raw)
    resp = backend.handle_rerank(req)
    assert resp.status == "pass_through"
    assert resp.payload == raw  # byte-identical
    recs = list(backend.log.scan(kind="rerank"))
    assert recs[-1].payload["fallback"] is True


def test_unknown_protocol_version_passes_through(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    payload, resp = rerank(backend, token, make_page(3), version="99")
    assert resp.status == "pass_through" and resp.payload == payload


def test_control_arm_observes_without_transforming(tmp_path):
    backend = build(tmp_path, arms=[("control", 1.0)])
    token, cfg = enroll(backend)
    assert cfg.plan_ref is None
    payload, resp = rerank(backend, token, make_page(4))
    assert resp.status == "pass_through" and resp.payload == payload
    exposures = list(backend.log.scan(kind="exposure"))
    assert [e.payload["global_position"] for e in exposures] == [0, 1, 2, 3]
    # second page continues the cumulative count
    rerank(backend, token, make_page(4, prefix="q"))
    exposures = list(backend.log.scan(kind="exposure"))
    assert [e.payload["global_position"] for e in exposures] == list(range(8))


def test_session_state_isolated_per_session(tmp_path):
    backend = build(tmp_path)
    token, cfg = enroll(backend)
    page = make_page(3, prefix="a")
    rerank(backend, token, page, session="s1")
    rerank(backend, token, make_page(3, prefix="b"), session="s2")
    k1 = (cfg.participant_id, "s1")
    k2 = (cfg.participant_id, "s2")
    assert backend.sessions[k1].consumed_count == 3
    assert backend.sessions[k2].consumed_count == 3


def test_scorer_timeout_fails_open(tmp_path):
    from feedlab.stubscorer import StubScorerServer
    with StubScorerServer(delay_ms=2000) as stub:
        plan = TransformPlan(
            plan_id="remote-plan", target_rule=TargetRule(threshold=0.5),
            downrank=OffsetPolicy(),
            scorer=Scorer(kind="remote", endpoint=stub.score_url, timeout_ms=5000))
        backend = build(tmp_path, plan=plan, server_budget_ms=200.0)
        token, _ = enroll(backend)
        payload, resp = rerank(backend, token, make_page(3), deadline=500.0)
    assert resp.status == "pass_through" and resp.payload == payload
    rec = list(backend.log.scan(kind="rerank"))[-1]
    assert rec.payload["fallback"] is True
    assert rec.payload["reason"] == "scorer_fallback"


def test_study_end_banner(tmp_path):
    backend = build(tmp_path, study_end_ms=1)
    token, _ = enroll(backend)
    payload, resp = rerank(backend, token, make_page(3))
    assert resp.status == "pass_through" and resp.payload == payload
    assert resp.study_ended is True
    assert resp.banners and resp.banners[0]["kind"] == "study_end"
    assert "uninstall" in resp.banners[0]["text"]


def test_insertion_consumes_pool_and_logs(tmp_path):
    pool = CandidatePool()
    pool.add(CandidatePost(post=make_post("g1", text="have a nice day"),
                           origin="tpl", eligibility_score=1.0))
    plan = TransformPlan(plan_id="insert-plan",
                         insertions=InsertionPlan(positions=(1,)))
    backend = build(tmp_path, plan=plan, pool=pool)
    token, _ = enroll(backend)
    _, resp = rerank(backend, token, make_page(3))
    assert decode_ids(resp) == ["p0", "g1", "p1", "p2"]
    assert len(pool) == 0
    tags = {e.payload["post_id"]: e.payload["action_tag"]
            for e in backend.log.scan(kind="exposure")}
    assert tags["g1"] == "inserted" and tags["p0"] == "organic"


def test_removed_posts_offered_to_pool(tmp_path):
    pool = CandidatePool()
    plan = TransformPlan(plan_id="remove-plan",
                         removal=PostPredicate(attachment_kind="video"))
    backend = build(tmp_path, plan=plan, pool=pool)
    token, _ = enroll(backend)
    posts = (make_post("p0"), make_post("pv", attachments=[video()]))
    _, resp = rerank(backend, token, make_page(0).with_posts(posts))
    assert decode_ids(resp) == ["p0"]
    got = pool.take(1)
    assert got and got[0].post.post_id == "pv"
    assert got[0].post.provenance == "transferred"


def test_survey_cards_logged_with_context(tmp_path):
    ema = EmaTriggerSpec(kind="interval", interval_n=3, context_window=2)
    backend = build(tmp_path, ema=ema)
    token, _ = enroll(backend)
    _, resp = rerank(backend, token, make_page(4))
    assert len(resp.survey_insertions) == 1
    card = resp.survey_insertions[0]
    assert card["position"] == 3
    assert card["question"] == "Are you interested in this post?"
    assert card["context_post_ids"] == ["p1", "p2"]
    survey_exposures = [e for e in backend.log.scan(kind="exposure")
                        if e.payload["action_tag"] == "survey_card"]
    assert len(survey_exposures) == 1
    assert survey_exposures[0].payload["post_id"] == card["card_id"]


def test_action_records_written(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    page = make_page(0).with_posts((make_post("p0", text="politics"),
                                    make_post("p1")))
    rerank(backend, token, page)
    actions = list(backend.log.scan(kind="action"))
    assert [a.payload["action"] for a in actions] == ["downranked"]


def test_end_session_logs_expired(tmp_path):
    plan = TransformPlan(plan_id="far-plan", target_rule=TargetRule(threshold=0.5),
                         downrank=OffsetPolicy(fixed_offset=500),
                         scorer=Scorer(kind="keyword", terms={"politics": 1.0}))
    backend = build(tmp_path, plan=plan)
    token, _ = enroll(backend)
    page = make_page(0).with_posts((make_post("p0", text="politics"),
                                    make_post("p1")))
    rerank(backend, token, page)
    expired = backend.end_session(token, "s1")
    assert [a.post_id for a in expired] == ["p0"]
    recs = [a for a in backend.log.scan(kind="action")
            if a.payload["action"] == "expired"]
    assert len(recs) == 1 and recs[0].payload["post_id"] == "p0"


# -- ingestion --------------------------------------------------------------

def batch(token, events, session="s1"):
    return {"participant_token": token, "session_id": session, "events": events}


def exposure_event(seq, pid="x1", pos=0):
    return {"seq": seq, "event": {
        "event_type": "EngagementEvent", "participant_id": "ignored",
        "kind": "like", "occurred_at": 1000 + seq, "post_id": pid, "value": 0}}


def test_ingest_idempotent(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    events = [exposure_event(0), exposure_event(1)]
    ack1 = backend.ingest_event_batch(batch(token, events))
    ack2 = backend.ingest_event_batch(batch(token, events))  # duplicate delivery
    assert ack1 == ack2 == {"ack_seq": 1}
    assert len(list(backend.log.scan(kind="engagement"))) == 2


def test_ingest_gap_flagged(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    backend.ingest_event_batch(batch(token, [exposure_event(0)]))
    ack = backend.ingest_event_batch(batch(token, [exposure_event(5)]))
    assert ack == {"ack_seq": 5}
    gaps = list(backend.log.scan(kind="ingest"))
    assert len(gaps) == 1
    assert gaps[0].payload["gap_after"] == 0 and gaps[0].payload["next_seq"] == 5


def test_ingest_dedup_survives_restart(tmp_path):
    backend = build(tmp_path)
    token, _ = enroll(backend)
    backend.ingest_event_batch(batch(token, [exposure_event(0)]))

    # a fresh backend over the same log must still dedup the redelivery
    coord = backend.coordination
    backend2 = Backend(coord, backend.plans, EventLog(tmp_path / "log"),
                       seed=backend.seed)
    ack = backend2.ingest_event_batch(batch(token, [exposure_event(0)]))
    assert ack == {"ack_seq": 0}
    assert len(list(backend2.log.scan(kind="engagement"))) == 1


def test_ingest_bad_token(tmp_path):
    backend = build(tmp_path)
    with pytest.raises(AuthFailed):
        backend.ingest_event_batch(batch("nope", [exposure_event(0)]))


def test_wire_round_trip():
    req = RerankRequest.from_wire({
        "participant_token": "t", "session_id": "s",
        "raw_payload": base64.b64encode(b'{"cursor":"","posts":[]}').decode(),
        "client_deadline": 450})
    assert req.raw_payload == b'{"cursor":"","posts":[]}'
    assert req.client_deadline_ms == 450.0
    assert req.format_id == MOCK_FORMAT_ID
