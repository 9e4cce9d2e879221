"""Operator command line: run services, simulate cohorts, replay payloads,
validate plans, and export or report on collected data.

Configuration is a TOML document; FEEDLAB_* environment variables override
file values, and command-line flags override both.
"""

from __future__ import annotations

import base64
import json
import os
import sys
import tempfile
from pathlib import Path

import click

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from . import plans as plans_mod
from .backend import Backend
from .coordination import CoordinationService, StudyConfig
from .errors import FeedlabError, PlanInvalid
from .measurement import SurveySchedule, engagement_report
from .mockplatform import InventorySpec, create_mock_app, generate_inventory
from .model import MOCK_FORMAT_ID, parse_feed_payload, serialize_feed_payload
from .rerank import SessionState, apply_transform
from .report import (export_records, format_report_table, render_latency_figure,
                     render_report_figures, write_report_csv)
from .scoring import ScoreResult, score_posts
from .server import create_app
from .simulate import AppServer, SessionScript, format_report, run_simulation
from .sourcing import CandidatePool
from .storage import EventLog, Registry


def load_config(path: str | None) -> dict:
    cfg: dict = {}
    if path:
        with open(path, "rb") as f:
            cfg = tomllib.load(f)
    for key in ("seed", "data_dir", "port", "server_budget_ms"):
        env = os.environ.get(f"FEEDLAB_{key.upper()}")
        if env is not None:
            cfg[key] = type(cfg.get(key, env))(env) if key in cfg else env
    return cfg


def _load_plan_table(cfg: dict) -> dict:
    table = {}
    for name, ref in cfg.get("plans", {}).items():
        if ref.startswith("bundled:"):
            table[name] = plans_mod.load_bundled_plan(ref.split(":", 1)[1])
        else:
            table[name] = plans_mod.load_plan(ref)
    if not table:
        for name in plans_mod.bundled_plan_names():
            table[name] = plans_mod.load_bundled_plan(name)
    return table


def build_stack(cfg: dict, data_dir: Path):
    """Assemble coordination + backend and return the ASGI app and backend."""
    data_dir.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    study_cfg = cfg.get("study", {})
    arms = list(study_cfg.get("arms", {"treatment": 0.5, "control": 0.5}).items())
    plan_by_arm = dict(study_cfg.get("plan_by_arm", {"treatment": "downrank-political"}))
    plan_table = _load_plan_table(cfg)
    for arm, ref in plan_by_arm.items():
        if ref is not None and ref not in plan_table:
            raise PlanInvalid(f"arm {arm!r} references unknown plan {ref!r}")

    registry = Registry(data_dir / "registry.json")
    log = EventLog(data_dir / "events")
    study = StudyConfig(arms=arms,
                        plan_ref_by_arm={a: plan_by_arm.get(a) for a, _ in arms},
                        seed=seed,
                        study_end_ms=study_cfg.get("study_end_ms"))
    coordination = CoordinationService(registry, study)
    schedules = {}
    diary = study_cfg.get("diary")
    if diary:
        schedules["diary"] = SurveySchedule(diary_cadence=diary.get("cadence", "daily"),
                                            min_exposure_gate=diary.get("min_exposure_gate", 0))
        study.survey_schedule_ref = "diary"
    backend = Backend(coordination, plan_table, log, pool=CandidatePool(),
                      server_budget_ms=float(cfg.get("server_budget_ms", 300.0)),
                      survey_schedules=schedules, seed=seed)
    return create_app(backend), backend


@click.group()
def main():
    """Feed experiment platform."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data-dir", default="./feedlab-data", show_default=True)
@click.option("--port", default=8400, show_default=True)
@click.option("--seed", default=None, type=int, help="Override the study seed.")
def serve(config_path, data_dir, port, seed):
    """Run the backend + coordination service."""
    import uvicorn
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    app, _backend = build_stack(cfg, Path(cfg.get("data_dir", data_dir)))
    uvicorn.run(app, host="127.0.0.1", port=int(cfg.get("port", port)))


@main.command()
@click.option("--port", default=8401, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--posts", default=500, show_default=True)
@click.option("--accounts", default=25, show_default=True)
@click.option("--page-size", default=10, show_default=True)
def mock(port, seed, posts, accounts, page_size):
    """Run the mock social platform."""
    import uvicorn
    inventory = generate_inventory(InventorySpec(seed=seed, n_posts=posts,
                                                 n_accounts=accounts))
    uvicorn.run(create_mock_app(inventory, page_size=page_size),
                host="127.0.0.1", port=port)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--cohort", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pages", default=5, show_default=True)
@click.option("--posts", default=200, show_default=True)
@click.option("--accounts", default=25, show_default=True)
@click.option("--page-size", default=10, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for report.json, summary.txt, and latency.png.")
def simulate(config_path, cohort, seed, pages, posts, accounts, page_size, out_dir):
    """Run a self-contained simulation: mock platform + backend + scripted cohort."""
    cfg = load_config(config_path)
    cfg["seed"] = seed
    inventory = generate_inventory(InventorySpec(seed=seed, n_posts=posts,
                                                 n_accounts=min(accounts, posts)))
    with tempfile.TemporaryDirectory() as tmp:
        app, backend = build_stack(cfg, Path(tmp))
        with AppServer(create_mock_app(inventory, page_size=page_size)) as platform, \
                AppServer(app) as backend_srv:
            script = SessionScript(pages_to_fetch=pages,
                                   like_p_by_topic={"political": 0.1, "positive": 0.2})
            rep = run_simulation(backend_srv.url, platform.url, cohort, script,
                                 seed=seed, topic_of=inventory.topic_of)
        arm_of = backend.coordination.arm_of_participants()
        rows = engagement_report(backend.log.scan(), arm_of)
    click.echo(format_report(rep))
    click.echo(format_report_table(rows))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
        (out / "summary.txt").write_text(format_report(rep) + "\n")
        write_report_csv(rows, out / "engagement.csv")
        render_latency_figure(rep, out / "latency.png")
        render_report_figures(rows, out)
        click.echo(f"wrote {out}/report.json, engagement.csv, latency.png")


@main.command()
@click.argument("payload", type=click.Path(exists=True))
@click.argument("plan", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the transformed payload bytes here.")
@click.option("--seed", default=0, show_default=True)
def replay(payload, plan, out_path, seed):
    """Apply a plan to a captured payload offline and print the action diff."""
    raw = Path(payload).read_bytes()
    plan_obj = plans_mod.load_plan(plan)
    page = parse_feed_payload(raw, MOCK_FORMAT_ID)
    if plan_obj.scorer is not None:
        scores = score_posts(list(page.posts), plan_obj.scorer)
    else:
        scores = ScoreResult()
    state = SessionState(participant_id="replay")
    transformed, _state = apply_transform(page, state, plan_obj, scores)
    out_bytes = serialize_feed_payload(transformed.page, MOCK_FORMAT_ID)
    click.echo(f"{len(transformed.actions)} actions")
    for a in transformed.actions:
        detail = f"{a.original_position}->" if a.original_position is not None else ""
        pos = a.new_position if a.new_position is not None else f"deferred@{a.deferred_target}"
        click.echo(f"  {a.action:<18} {a.post_id} {detail}{pos}")
    if out_bytes == raw:
        click.echo("output byte-identical to input")
    if out_path:
        Path(out_path).write_bytes(out_bytes)


@main.command()
@click.option("--data-dir", default="./feedlab-data", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for engagement.csv and figures (default: data dir).")
def report(data_dir, out_dir):
    """Aggregate the event log into the per-arm engagement report."""
    data_dir = Path(data_dir)
    log = EventLog(data_dir / "events")
    registry = Registry(data_dir / "registry.json")
    arm_of = {cfg["participant_id"]: cfg["arm"] for _, cfg in registry.items("participants")}
    rows = engagement_report(log.scan(), arm_of)
    click.echo(format_report_table(rows))
    out = Path(out_dir) if out_dir else data_dir
    write_report_csv(rows, out / "engagement.csv")
    figures = render_report_figures(rows, out)
    click.echo(f"wrote {out / 'engagement.csv'}" +
               (f" and {len(figures)} figure(s)" if figures else ""))


@main.command()
@click.option("--data-dir", default="./feedlab-data", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="./export", show_default=True)
def export(data_dir, out_dir):
    """Export the event log to one CSV per record kind."""
    log = EventLog(Path(data_dir) / "events")
    written = export_records(log, out_dir)
    for path in written:
        click.echo(str(path))
    if not written:
        click.echo("no records")


@main.command("validate-plan")
@click.argument("plan", type=click.Path(exists=True))
def validate_plan(plan):
    """Validate a transform plan document; nonzero exit on violation."""
    try:
        plan_obj = plans_mod.load_plan(plan)
    except (FeedlabError, OSError) as e:
        click.echo(f"invalid plan: {e}", err=True)
        sys.exit(1)
    click.echo(f"plan {plan_obj.plan_id!r} (version {plan_obj.version}) is valid")


if __name__ == "__main__":
    main()
