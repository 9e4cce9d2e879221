"""HTTP surface for the backend and coordination service.

Endpoints:
    POST /v1/rerank          rerank round-trip (participant token header)
    POST /v1/events          event batch ingestion (idempotent)
    GET  /v1/config          post-install config claim via the `flc` cookie
    GET  /reg/enter          registration entry (accepts survey-redirect params)
    POST /reg/consent        consent decision
    GET  /reg/instructions   instructions page; moves the flow forward
    GET  /reg/recover/{id}   error-recovery link, rebuilds the cookie
"""

from __future__ import annotations

from fastapi import FastAPI, Request, Response
from fastapi.responses import HTMLResponse, JSONResponse

from .backend import Backend, RerankRequest
from .coordination import COOKIE_MAX_AGE_S, COOKIE_NAME
from .errors import AuthFailed, NoPersistentEntry, NotConsented, UnknownRegistration

TOKEN_HEADER = "x-participant-token"


def create_app(backend: Backend) -> FastAPI:
    app = FastAPI(title="feedlab backend")
    coord = backend.coordination

    def _token(request: Request, body: dict | None = None) -> str | None:
        return request.headers.get(TOKEN_HEADER) or (body or {}).get("participant_token")

    @app.post("/v1/rerank")
    def rerank(request: Request, body: dict):
        body = dict(body)
        token = _token(request, body)
        if token:
            body["participant_token"] = token
        try:
            req = RerankRequest.from_wire(body)
            resp = backend.handle_rerank(req)
        except AuthFailed as e:
            return JSONResponse({"error": "auth_failed", "detail": str(e)}, status_code=401)
        except (KeyError, ValueError) as e:
            return JSONResponse({"error": "bad_request", "detail": str(e)}, status_code=400)
        return resp.to_wire()

    @app.post("/v1/events")
    def events(request: Request, body: dict):
        token = _token(request, body)
        try:
            ack = backend.ingest_event_batch({**body, "participant_token": token})
        except AuthFailed as e:
            return JSONResponse({"error": "auth_failed", "detail": str(e)}, status_code=401)
        return ack

    @app.get("/v1/config")
    def claim_config(request: Request):
        entry = request.cookies.get(COOKIE_NAME)
        try:
            token, config = coord.claim_config(entry)
        except NoPersistentEntry:
            return JSONResponse(
                {"error": "no_persistent_entry",
                 "recovery": "Open your personal recovery link (or the registration "
                             "link from the recruitment platform) in this browser, "
                             "then try again."},
                status_code=404)
        except NotConsented as e:
            return JSONResponse({"error": "not_consented", "detail": str(e)},
                                status_code=403)
        return {"participant_token": token, "config": config.to_dict()}

    # -- registration flow ---------------------------------------------------

    @app.get("/reg/enter")
    def reg_enter(request: Request):
        params = dict(request.query_params)
        if "recruitment_id" not in params:
            return JSONResponse({"error": "missing recruitment_id"}, status_code=400)
        reg_id, entry, state = coord.begin_registration(params)
        if state == "ineligible":
            return HTMLResponse(
                "<html><body><h1>Thanks for your interest</h1>"
                "<p>You do not qualify for this study.</p></body></html>")
        html = (
            "<html><body><h1>Study consent</h1>"
            f"<form method='post' action='/reg/consent?registration_id={reg_id}&accepted=true'>"
            "<button type='submit'>I consent</button></form>"
            f"<form method='post' action='/reg/consent?registration_id={reg_id}&accepted=false'>"
            "<button type='submit'>I do not consent</button></form>"
            f"<p data-registration-id='{reg_id}'></p></body></html>")
        response = HTMLResponse(html)
        if entry:
            response.set_cookie(COOKIE_NAME, entry, max_age=COOKIE_MAX_AGE_S,
                                httponly=True, samesite="lax")
        return response

    @app.post("/reg/consent")
    def reg_consent(registration_id: str, accepted: bool):
        try:
            state = coord.record_consent(registration_id, accepted)
        except UnknownRegistration:
            return JSONResponse({"error": "unknown_registration"}, status_code=404)
        return {"registration_id": registration_id, "state": state}

    @app.get("/reg/instructions")
    def reg_instructions(registration_id: str):
        try:
            state = coord.mark_instructed(registration_id)
        except UnknownRegistration:
            return JSONResponse({"error": "unknown_registration"}, status_code=404)
        if state != "instructed" and state != "claimed":
            return HTMLResponse(
                "<html><body><p>Please complete consent first.</p></body></html>",
                status_code=403)
        return HTMLResponse(
            "<html><body><h1>Install the extension</h1>"
            "<p>1. Install the study extension from the store link below.</p>"
            "<p>2. It will pick up your configuration automatically.</p>"
            "<a href='https://extensions.example/store/feedlab'>Extension store</a>"
            f"<p data-state='{state}'></p></body></html>")

    @app.get("/reg/recover/{registration_id}")
    def reg_recover(registration_id: str):
        try:
            entry, state = coord.recover(registration_id)
        except UnknownRegistration:
            return JSONResponse({"error": "unknown_registration"}, status_code=404)
        if state in ("entered", "declined", "ineligible"):
            # back to the consent gate; a declined registration never yields a config
            return HTMLResponse(
                "<html><body><p>Please review the consent form again via your "
                "registration link.</p>"
                f"<p data-state='{state}'></p></body></html>")
        response = HTMLResponse(
            "<html><body><h1>Welcome back</h1><p>Your setup has been restored; "
            "continue with the instructions below.</p>"
            "<a href='https://extensions.example/store/feedlab'>Extension store</a>"
            f"<p data-state='{state}'></p></body></html>")
        if entry:
            response.set_cookie(COOKIE_NAME, entry, max_age=COOKIE_MAX_AGE_S,
                                httponly=True, samesite="lax")
        return response

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    return app
