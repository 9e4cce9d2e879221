"""Transform plan documents: versioned JSON load and validation.

Example plans for the three canonical experiments ship under
feedlab/plans/ (down-rank political content, remove video posts,
insert positive-emotion posts).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import PlanInvalid
from .measurement import EmaTriggerSpec
from .rerank import (ContentEdit, InsertionPlan, OffsetPolicy, PostPredicate,
                     TargetRule, TransformPlan)
from .scoring import Scorer

SUPPORTED_VERSIONS = (1,)


def plan_from_dict(doc: dict) -> TransformPlan:
    if not isinstance(doc, dict):
        raise PlanInvalid("plan document must be a JSON object")
    version = doc.get("version", 1)
    if version not in SUPPORTED_VERSIONS:
        raise PlanInvalid(f"unsupported plan version: {version}")

    target = doc.get("target", {})
    threshold = target.get("threshold")
    if threshold is not None:
        threshold = float(threshold)
    predicate = target.get("predicate")
    rule = TargetRule(
        threshold=threshold,
        predicate=PostPredicate.from_spec(predicate) if predicate else None,
    )

    downrank = None
    if "downrank" in doc and doc["downrank"] is not None:
        d = doc["downrank"]
        downrank = OffsetPolicy(kind=d.get("kind", "fixed"),
                                fixed_offset=int(d.get("fixed_offset", 100)),
                                scale=int(d.get("scale", 100)))

    removal = None
    if "removal" in doc and doc["removal"] is not None:
        removal = PostPredicate.from_spec(doc["removal"])

    insertions = None
    if "insertions" in doc and doc["insertions"] is not None:
        ins = doc["insertions"]
        insertions = InsertionPlan(positions=tuple(int(p) for p in ins.get("positions", ())),
                                   source=ins.get("source", "pool"))

    edits = tuple(
        ContentEdit(
            kind=e["kind"],
            substitution=e.get("substitution"),
            metrics=e.get("metrics"),
            factor=e.get("factor"),
            attachment_kind=e.get("attachment_kind"),
            attachment_uri=e.get("attachment_uri"),
            endpoint=e.get("endpoint"),
            timeout_ms=float(e.get("timeout_ms", 300.0)),
        )
        for e in doc.get("edits", ())
    )

    ema = None
    if "ema" in doc and doc["ema"] is not None:
        try:
            ema = EmaTriggerSpec.from_spec(doc["ema"])
        except (KeyError, ValueError) as e:
            raise PlanInvalid(f"invalid ema trigger: {e}") from e

    scorer = None
    if "scorer" in doc and doc["scorer"] is not None:
        try:
            scorer = Scorer.from_config(doc["scorer"])
        except ValueError as e:
            raise PlanInvalid(f"invalid scorer config: {e}") from e

    plan = TransformPlan(
        plan_id=doc.get("plan_id", "unnamed"),
        version=version,
        target_rule=rule,
        downrank=downrank,
        removal=removal,
        insertions=insertions,
        edits=edits,
        ema=ema,
        scorer=scorer,
    )
    plan.validate()
    return plan


def load_plan(path) -> TransformPlan:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise PlanInvalid(f"plan file is not valid JSON: {e}") from e
    return plan_from_dict(doc)


def load_bundled_plan(name: str) -> TransformPlan:
    """Load one of the example plans shipped with the package."""
    data = resources.files("feedlab").joinpath(f"plans/{name}.json").read_text("utf-8")
    return plan_from_dict(json.loads(data))


def bundled_plan_names() -> list[str]:
    plans_dir = resources.files("feedlab").joinpath("plans")
    return sorted(p.name[:-5] for p in plans_dir.iterdir() if p.name.endswith(".json"))
