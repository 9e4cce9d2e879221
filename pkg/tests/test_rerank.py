import pytest
from hypothesis import given, settings, strategies as st

from feedlab.errors import DuplicatePostId, PlanInvalid, PositionOutOfRange
from feedlab.model import Attachment, FeedPage
from feedlab.rerank import (ContentEdit, InsertionPlan, OffsetPolicy,
                            PostPredicate, SessionState, TargetRule,
                            TransformPlan, apply_edits, apply_transform,
                            end_session, insert_posts, release_due_deferred,
                            remove_posts, replay_actions)
from feedlab.scoring import ScoreResult
from feedlab.sourcing import CandidatePost

from .conftest import make_page, make_post, video
from .naive_oracle import naive_transform


def ok_scores(scores=None):
    return ScoreResult(scores=dict(scores or {}), elapsed_ms=1.0, fallback=False)


def downrank_plan(offset, threshold=0.5, **kwargs):
    return TransformPlan(plan_id="t", target_rule=TargetRule(threshold=threshold),
                         downrank=OffsetPolicy(kind="fixed", fixed_offset=offset),
                         **kwargs)


def state(consumed=0, **kwargs):
    return SessionState(participant_id="p_test", consumed_count=consumed, **kwargs)


# -- down-rank -------------------------------------------------------------

def test_downrank_local_reposition():
    page = make_page(5)
    plan = downrank_plan(offset=2)
    out, st2 = apply_transform(page, state(), plan, ok_scores({"p2": 0.9}))
    assert out.page.post_ids() == ["p0", "p1", "p3", "p4", "p2"]
    act = [a for a in out.actions if a.action == "downranked"][0]
    assert (act.original_position, act.new_position) == (2, 4)
    assert st2.consumed_count == 5
    assert st2.deferred == ()


def test_downrank_beyond_page_defers():
    page = make_page(5)
    plan = downrank_plan(offset=100)
    out, st2 = apply_transform(page, state(), plan, ok_scores({"p2": 0.9}))
    assert out.page.post_ids() == ["p0", "p1", "p3", "p4"]
    assert st2.consumed_count == 4
    assert len(st2.deferred) == 1
    assert st2.deferred[0].target_position == 102  # 0 consumed + index 2 + 100
    act = out.actions[0]
    assert act.action == "downranked" and act.deferred_target == 102


def test_deferred_release_exact_position():
    plan = downrank_plan(offset=100)
    st1 = state()
    first = make_page(5)
    out, st1 = apply_transform(first, st1, plan, ok_scores({"p2": 0.9}))
    # consume identity pages until the deferred target comes into view
    page_no = 1
    while st1.deferred:
        page = make_page(10, prefix=f"q{page_no}_")
        out, st1 = apply_transform(page, st1, plan, ok_scores())
        page_no += 1
    # the released post must sit exactly at session position 102
    local = [i for i, pid in enumerate(out.page.post_ids()) if pid == "p2"]
    assert local, "deferred post never released"
    consumed_before = st1.consumed_count - len(out.page.posts)
    assert consumed_before + local[0] == 102
    released = [a for a in out.actions if a.action == "deferred_released"]
    assert released and released[0].post_id == "p2"


def test_released_post_not_redownranked():
    # the release page would itself target p2; it must not re-defer forever
    plan = downrank_plan(offset=3)
    st1 = state()
    out, st1 = apply_transform(make_page(2), st1, plan, ok_scores({"p1": 0.9}))
    assert out.page.post_ids() == ["p0"]
    assert st1.deferred[0].target_position == 4
    out, st1 = apply_transform(make_page(5, prefix="q"), st1, plan,
                               ok_scores({"p1": 0.9}))
    assert "p1" in out.page.post_ids()
    assert st1.deferred == ()


def test_score_based_offset():
    policy = OffsetPolicy(kind="score_based", scale=10)
    assert policy.offset_for(0.55) == 6  # ceil(5.5)
    assert policy.offset_for(0.0) == 1
    plan = TransformPlan(plan_id="t", target_rule=TargetRule(threshold=0.5),
                         downrank=policy)
    out, _ = apply_transform(make_page(10), state(), plan, ok_scores({"p1": 0.2,
                                                                      "p3": 0.55}))
    # p3 moves from 3 to 3+6=9; p1 under threshold stays put
    assert out.page.post_ids().index("p3") == 9
    assert out.page.post_ids().index("p1") == 1


def test_non_targeted_order_stable():
    page = make_page(8)
    plan = downrank_plan(offset=2)
    out, _ = apply_transform(page, state(), plan, ok_scores({"p1": 0.9, "p5": 0.9}))
    organic = [pid for pid in out.page.post_ids() if pid not in ("p1", "p5")]
    assert organic == ["p0", "p2", "p3", "p4", "p6", "p7"]


def test_expired_deferred_logged_on_session_end():
    plan = downrank_plan(offset=500)
    _, st1 = apply_transform(make_page(5), state(), plan, ok_scores({"p2": 0.9}))
    actions, st2 = end_session(st1)
    assert [a.action for a in actions] == ["expired"]
    assert actions[0].post_id == "p2" and actions[0].deferred_target == 502
    assert st2.deferred == ()


def test_fallback_scores_rejected():
    bad = ScoreResult(scores={}, elapsed_ms=500.0, fallback=True)
    with pytest.raises(PlanInvalid):
        apply_transform(make_page(3), state(), downrank_plan(2), bad)


# -- removal ---------------------------------------------------------------

def test_remove_by_attachment_kind():
    posts = [make_post("p0"), make_post("p1", attachments=[video()]),
             make_post("p2")]
    page = FeedPage(cursor="", posts=tuple(posts))
    out, removed = remove_posts(page, PostPredicate(attachment_kind="video"))
    assert out.post_ids() == ["p0", "p2"]
    assert [p.post_id for p in removed] == ["p1"]


def test_removal_in_transform_logged():
    posts = [make_post("p0"), make_post("p1", attachments=[video()]),
             make_post("p2")]
    page = FeedPage(cursor="", posts=tuple(posts))
    plan = TransformPlan(plan_id="t", removal=PostPredicate(attachment_kind="video"))
    out, st2 = apply_transform(page, state(), plan, ok_scores())
    assert out.page.post_ids() == ["p0", "p2"]
    assert st2.consumed_count == 2
    assert [(a.post_id, a.action, a.original_position) for a in out.actions] \
        == [("p1", "removed", 1)]


def test_released_post_still_subject_to_removal():
    # removal runs before down-rank, so a released post can only hit the
    # removal rule when the plan changed mid-session
    plan1 = TransformPlan(plan_id="t1", target_rule=TargetRule(threshold=0.5),
                          downrank=OffsetPolicy(fixed_offset=6))
    vpost = make_post("pv", attachments=[video()])
    page = FeedPage(cursor="", posts=(vpost, make_post("pa")))
    _, st1 = apply_transform(page, state(), plan1, ok_scores({"pv": 0.9}))
    assert st1.deferred and st1.deferred[0].post.post_id == "pv"
    plan2 = TransformPlan(plan_id="t2",
                          removal=PostPredicate(attachment_kind="video"))
    out, st1 = apply_transform(make_page(10, prefix="q"), st1, plan2, ok_scores())
    assert "pv" not in out.page.post_ids()
    assert any(a.post_id == "pv" and a.action == "removed" for a in out.actions)


# -- insertion -------------------------------------------------------------

def cand(pid, text="friendly note", score=0.5):
    return CandidatePost(post=make_post(pid, text=text), origin="generated",
                         eligibility_score=score)


def test_insert_posts_exact_indices():
    page = make_page(4)
    out = insert_posts(page, [(1, make_post("x1")), (3, make_post("x2"))])
    assert out.post_ids() == ["p0", "x1", "p1", "x2", "p2", "p3"]


def test_insert_duplicate_rejected():
    with pytest.raises(DuplicatePostId):
        insert_posts(make_page(3), [(0, make_post("p1"))])


def test_insert_out_of_range_rejected():
    with pytest.raises(PositionOutOfRange):
        insert_posts(make_page(3), [(9, make_post("x"))])


def test_insert_in_transform():
    plan = TransformPlan(plan_id="t", insertions=InsertionPlan(positions=(2, 7)))
    out, st2 = apply_transform(make_page(6), state(), plan, ok_scores(),
                               candidates=[cand("g1"), cand("g2")])
    assert out.page.post_ids() == ["p0", "p1", "g1", "p2", "p3", "p4", "p5", "g2"]
    assert st2.consumed_count == 8
    assert [(a.post_id, a.new_position) for a in out.actions] == [("g1", 2), ("g2", 7)]


def test_insert_skips_candidate_already_on_page():
    plan = TransformPlan(plan_id="t", insertions=InsertionPlan(positions=(0,)))
    out, _ = apply_transform(make_page(3), state(), plan, ok_scores(),
                             candidates=[cand("p1"), cand("g1")])
    assert out.page.post_ids() == ["g1", "p0", "p1", "p2"]


def test_insert_beyond_end_appends():
    plan = TransformPlan(plan_id="t", insertions=InsertionPlan(positions=(40,)))
    out, _ = apply_transform(make_page(3), state(), plan, ok_scores(),
                             candidates=[cand("g1")])
    assert out.page.post_ids() == ["p0", "p1", "p2", "g1"]


# -- edits -----------------------------------------------------------------

def test_metrics_scale_round_half_away():
    post = make_post("p0", likes=500, comments=25, shares=5)
    edited, fb = apply_edits(post, [ContentEdit(kind="metrics_scale", factor=0.1)])
    assert not fb
    assert (edited.metrics.likes, edited.metrics.comments, edited.metrics.shares) \
        == (50, 3, 1)  # 2.5 and 0.5 round away from zero


def test_metrics_set_partial():
    edited, _ = apply_edits(make_post("p0", likes=10, comments=2, shares=1),
                            [ContentEdit(kind="metrics_set", metrics={"likes": 0})])
    assert (edited.metrics.likes, edited.metrics.comments) == (0, 2)


def test_text_substitution_whole_word_single_pass():
    edit = ContentEdit(kind="text_substitution",
                       substitution={"awful": "bad", "bad": "poor"})
    edited, _ = apply_edits(make_post("p0", text="Awful, just awful. badge bad"),
                            [edit])
    # case-insensitive, whole words only, output never re-substituted
    assert edited.text == "bad, just bad. badge poor"


def test_attachment_replace():
    post = make_post("p0", attachments=[video(), Attachment("image", "u2")])
    edit = ContentEdit(kind="attachment_replace", attachment_kind="video",
                       attachment_uri="https://x.example/placeholder")
    edited, _ = apply_edits(post, [edit])
    assert edited.attachments[0].uri == "https://x.example/placeholder"
    assert edited.attachments[1].uri == "u2"


def test_remote_rewrite_timeout_keeps_text_flags_fallback():
    edit = ContentEdit(kind="remote_rewrite", endpoint="http://x/rw")
    edited, fb = apply_edits(make_post("p0", text="orig"), [edit],
                             rewriter=lambda *_: None)
    assert edited.text == "orig" and fb is True


def test_edit_only_applies_to_targeted():
    plan = TransformPlan(plan_id="t",
                         target_rule=TargetRule(predicate=PostPredicate(
                             post_id_in=("p1",))),
                         edits=(ContentEdit(kind="metrics_set",
                                            metrics={"likes": 1}),))
    out, _ = apply_transform(make_page(3), state(), plan, ok_scores())
    likes = [p.metrics.likes for p in out.page.posts]
    assert likes == [10, 1, 10]
    assert [a.action for a in out.actions] == ["edited"]


# -- plan validation -------------------------------------------------------

def test_plan_invalid_threshold():
    plan = TransformPlan(plan_id="t", target_rule=TargetRule(threshold=1.5),
                         downrank=OffsetPolicy())
    with pytest.raises(PlanInvalid):
        plan.validate()


def test_plan_downrank_needs_target():
    with pytest.raises(PlanInvalid):
        TransformPlan(plan_id="t", downrank=OffsetPolicy()).validate()


def test_plan_conflicting_rules():
    pred = PostPredicate(attachment_kind="video")
    plan = TransformPlan(plan_id="t", target_rule=TargetRule(predicate=pred),
                         downrank=OffsetPolicy(), removal=pred)
    with pytest.raises(PlanInvalid):
        plan.validate()


# -- replay ----------------------------------------------------------------

def test_replay_reconstructs_output():
    plan = downrank_plan(offset=2)
    page = make_page(6)
    out, _ = apply_transform(page, state(), plan, ok_scores({"p1": 0.9}))
    assert replay_actions(page, out.actions) == out.page


def test_replay_with_removal_insert_edit():
    plan = TransformPlan(
        plan_id="t",
        target_rule=TargetRule(predicate=PostPredicate(post_id_in=("p4",))),
        downrank=OffsetPolicy(fixed_offset=1),
        removal=PostPredicate(attachment_kind="video"),
        insertions=InsertionPlan(positions=(1,)),
        edits=(ContentEdit(kind="metrics_set", metrics={"likes": 7}),))
    posts = [make_post(f"p{i}", attachments=[video()] if i == 2 else ())
             for i in range(6)]
    page = FeedPage(cursor="", posts=tuple(posts))
    out, _ = apply_transform(page, state(), plan, ok_scores(),
                             candidates=[cand("g1")])
    assert replay_actions(page, out.actions) == out.page


def test_identity_plan_no_actions():
    page = make_page(5)
    out, st2 = apply_transform(page, state(), TransformPlan(plan_id="id"),
                               ok_scores())
    assert out.page == page and out.actions == ()
    assert st2.consumed_count == 5


# -- oracle cross-check and properties -------------------------------------

def test_matches_naive_oracle_scripted():
    plan = TransformPlan(
        plan_id="t", target_rule=TargetRule(threshold=0.5),
        downrank=OffsetPolicy(fixed_offset=4),
        removal=PostPredicate(attachment_kind="video"),
        insertions=InsertionPlan(positions=(1,)),
        edits=(ContentEdit(kind="metrics_set", metrics={"likes": 3}),))
    st1 = state()
    for page_no in range(6):
        posts = [make_post(f"s{page_no}_{i}",
                           attachments=[video()] if (page_no + i) % 5 == 4 else ())
                 for i in range(7)]
        page = FeedPage(cursor="", posts=tuple(posts))
        scores = ok_scores({f"s{page_no}_{i}": 0.9 for i in range(0, 7, 3)})
        cands = [cand(f"c{page_no}")]
        expect_posts, expect_deferred = naive_transform(
            page, st1.consumed_count, st1.deferred, plan, scores.scores,
            candidates=cands, next_seq=st1.next_seq)
        out, st1 = apply_transform(page, st1, plan, scores, candidates=cands)
        assert [p.post_id for p in out.page.posts] \
            == [p.post_id for p in expect_posts]
        assert [(e.target_position, e.post.post_id) for e in st1.deferred] \
            == [(t, p.post_id) for t, _s, p in expect_deferred]


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 12),
    hot=st.sets(st.integers(0, 11), max_size=4),
    offset=st.integers(1, 20),
    consumed=st.integers(0, 30),
)
def test_conservation_and_stability_property(n, hot, offset, consumed):
    page = make_page(n)
    plan = downrank_plan(offset=offset)
    scores = ok_scores({f"p{i}": 0.9 for i in hot if i < n})
    out, st2 = apply_transform(page, state(consumed=consumed), plan, scores)
    out_ids = out.page.post_ids()
    deferred_ids = [e.post.post_id for e in st2.deferred]
    # conservation: every input post is either on the page or deferred
    assert sorted(out_ids + deferred_ids) == sorted(page.post_ids())
    assert len(set(out_ids)) == len(out_ids)
    # stability: untargeted posts keep their relative order
    hot_ids = {f"p{i}" for i in hot}
    organic = [pid for pid in out_ids if pid not in hot_ids]
    assert organic == [pid for pid in page.post_ids() if pid not in hot_ids]
    assert st2.consumed_count == consumed + len(out_ids)
