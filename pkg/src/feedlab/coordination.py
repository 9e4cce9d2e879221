"""Registration and coordination: parameter passing via a persistent browser
entry, consent gating, deterministic condition assignment, and config claims.

Flow states: entered -> consented -> instructed -> claimed, with
recovered -> instructed as the only backward edge. A declined consent closes
the registration for good: no config is ever issued and no data is accepted.
"""

from __future__ import annotations

import hashlib
import secrets
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, asdict

from .errors import (NoPersistentEntry, NotConsented, UnknownRegistration,
                     WeightsInvalid)
from .storage import Registry

COOKIE_NAME = "flc"
COOKIE_MAX_AGE_S = 30 * 24 * 3600


def assign_condition(participant_id: str, arms, seed: int) -> str:
    """Deterministic weighted bucketing of a keyed hash of the participant id.

    arms: list of (label, weight); weights must sum to 1.
    """
    arms = list(arms)
    total = sum(w for _, w in arms)
    if not arms or any(w < 0 for _, w in arms) or abs(total - 1.0) > 1e-9:
        raise WeightsInvalid(f"arm weights must be non-negative and sum to 1, got {arms}")
    digest = hashlib.sha256(f"{seed}:{participant_id}".encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    cumulative = 0.0
    for label, weight in arms:
        cumulative += weight
        if u < cumulative:
            return label
    return arms[-1][0]


@dataclass(frozen=True)
class ParticipantConfig:
    participant_id: str
    arm: str
    plan_ref: str | None
    mode: str = "server"  # "server" | "local"
    survey_schedule_ref: str | None = None
    contact: str | None = None
    contact_consented: bool = False
    timezone: str = "UTC"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudyConfig:
    arms: list            # [(label, weight)]
    plan_ref_by_arm: dict  # arm -> plan id or None (None = control pass-through)
    seed: int = 0
    mode: str = "server"
    survey_schedule_ref: str | None = None
    study_end_ms: int | None = None


class CoordinationService:
    def __init__(self, registry: Registry, study: StudyConfig,
                 eligibility=None, clock=None):
        self.registry = registry
        self.study = study
        self.eligibility = eligibility  # predicate over recruitment_params, or None
        self.clock = clock or (lambda: int(time.time() * 1000))
        self._locks = defaultdict(threading.Lock)
        self._global = threading.Lock()

    def _lock_for(self, registration_id):
        with self._global:
            return self._locks[registration_id]

    # -- flow operations ----------------------------------------------------

    def begin_registration(self, params: dict):
        """Start (or resume) a registration; returns (registration_id, entry token, state).

        The entry token is the value placed in the participant's browser as
        the persistent entry; it is opaque and references server-side state.
        """
        recruitment_id = params.get("recruitment_id")
        if not recruitment_id:
            raise ValueError("recruitment params must include 'recruitment_id'")
        with self._global:
            for reg_id, reg in self.registry.items("registrations"):
                if reg["recruitment_params"].get("recruitment_id") == recruitment_id:
                    return reg_id, reg["persistent_entry_value"], reg["state"]
            if self.eligibility is not None and not self.eligibility(params):
                reg_id = "reg_" + secrets.token_hex(8)
                self.registry.put("registrations", reg_id, {
                    "recruitment_params": dict(params), "state": "ineligible",
                    "created_at": self.clock(), "persistent_entry_value": None,
                })
                return reg_id, None, "ineligible"
            reg_id = "reg_" + secrets.token_hex(8)
            entry = secrets.token_urlsafe(24)
            self.registry.put("registrations", reg_id, {
                "recruitment_params": dict(params), "state": "entered",
                "created_at": self.clock(), "persistent_entry_value": entry,
            })
            return reg_id, entry, "entered"

    def _get(self, registration_id):
        reg = self.registry.get("registrations", registration_id)
        if reg is None:
            raise UnknownRegistration(registration_id)
        return reg

    def record_consent(self, registration_id: str, accepted: bool) -> str:
        with self._lock_for(registration_id):
            reg = self._get(registration_id)
            if reg["state"] == "ineligible":
                return "ineligible"
            if not accepted:
                if reg["state"] != "claimed":
                    # once declined the registration is closed for good;
                    # post-claim withdrawal goes through the storage tombstone
                    reg["state"] = "declined"
            elif reg["state"] == "entered":
                reg["state"] = "consented"
            self.registry.put("registrations", registration_id, reg)
            return reg["state"]

    def mark_instructed(self, registration_id: str) -> str:
        """Instructions page served; consented or recovered flows move forward."""
        with self._lock_for(registration_id):
            reg = self._get(registration_id)
            if reg["state"] in ("consented", "recovered"):
                reg["state"] = "instructed"
                self.registry.put("registrations", registration_id, reg)
            return reg["state"]

    def claim_config(self, persistent_entry_value):
        """Exchange the browser entry for the participant token and config.

        The first claim assigns the arm; any later claim returns the identical
        config (safe re-setup) and is recorded as a repeat.
        """
        if not persistent_entry_value:
            raise NoPersistentEntry("no persistent entry presented")
        match = None
        for reg_id, reg in self.registry.items("registrations"):
            if reg.get("persistent_entry_value") == persistent_entry_value:
                match = (reg_id, reg)
                break
        if match is None:
            raise NoPersistentEntry("persistent entry does not match any registration")
        reg_id, _ = match
        with self._lock_for(reg_id):
            reg = self._get(reg_id)
            if reg["state"] in ("entered", "declined", "ineligible"):
                raise NotConsented(f"registration is in state {reg['state']!r}")
            if reg["state"] == "claimed":
                token = reg["participant_token"]
                cfg = self.registry.get("participants", token)
                cfg["repeat_claims"] = cfg.get("repeat_claims", 0) + 1
                self.registry.put("participants", token, cfg)
                return token, self._config_from_stored(cfg)
            # keyed by the recruitment identity so reruns of a simulated cohort
            # reproduce the same participants and therefore the same arms
            recruitment_id = reg["recruitment_params"].get("recruitment_id", reg_id)
            participant_id = "p_" + hashlib.sha256(recruitment_id.encode()).hexdigest()[:12]
            arm = assign_condition(participant_id, self.study.arms, self.study.seed)
            token = secrets.token_urlsafe(24)
            params = reg["recruitment_params"]
            config = ParticipantConfig(
                participant_id=participant_id,
                arm=arm,
                plan_ref=self.study.plan_ref_by_arm.get(arm),
                mode=self.study.mode,
                survey_schedule_ref=self.study.survey_schedule_ref,
                contact=params.get("email"),
                contact_consented=bool(params.get("email")),
                timezone=params.get("timezone", "UTC"),
            )
            stored = config.to_dict()
            stored["registration_id"] = reg_id
            stored["repeat_claims"] = 0
            self.registry.put("participants", token, stored)
            reg["state"] = "claimed"
            reg["participant_token"] = token
            reg["participant_id"] = participant_id
            self.registry.put("registrations", reg_id, reg)
            return token, config

    @staticmethod
    def _config_from_stored(stored: dict) -> ParticipantConfig:
        fields = {k: stored[k] for k in ParticipantConfig.__dataclass_fields__}
        if isinstance(fields.get("plan_ref"), list):
            fields["plan_ref"] = tuple(fields["plan_ref"])
        return ParticipantConfig(**fields)

    def resolve_token(self, token: str) -> ParticipantConfig | None:
        stored = self.registry.get("participants", token)
        return self._config_from_stored(stored) if stored else None

    def issue_recovery_link(self, registration_id: str, base_url: str = "") -> str:
        """URL that reconstructs the persistent entry in any browser."""
        self._get(registration_id)
        return f"{base_url}/reg/recover/{registration_id}"

    def recover(self, registration_id: str):
        """Re-enter the flow from a recovery link; idempotent.

        Declined registrations come back to the consent page, never a config.
        """
        with self._lock_for(registration_id):
            reg = self._get(registration_id)
            if reg["state"] in ("declined", "entered", "ineligible"):
                return reg["persistent_entry_value"], reg["state"]
            if reg["state"] != "claimed":
                reg["state"] = "instructed"
                self.registry.put("registrations", registration_id, reg)
            return reg["persistent_entry_value"], reg["state"]

    def study_ended(self, now_ms: int | None = None) -> bool:
        if self.study.study_end_ms is None:
            return False
        return (now_ms if now_ms is not None else self.clock()) >= self.study.study_end_ms

    def arm_of_participants(self) -> dict[str, str]:
        """participant_id -> arm, for reporting."""
        return {cfg["participant_id"]: cfg["arm"]
                for _, cfg in self.registry.items("participants")}
