"""Durable storage: append-only event log plus a small registry snapshot.

Segment file layout (byte-exact): each record is
    4-byte big-endian payload length | UTF-8 JSON payload | 4-byte big-endian CRC32
One segment file per UTC day (events-YYYYMMDD.log). Offsets are the global
0-based record ordinal across segments in name order; they are strictly
increasing and records are immutable once written.

Withdrawal is a tombstone record: subsequent scans exclude the participant;
compact() physically erases tombstoned records on request.
"""

from __future__ import annotations

import json
import os
import queue
import struct
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import SchemaViolation, StorageFull

RECORD_KINDS = frozenset({
    "exposure", "engagement", "survey_response", "action", "rerank",
    "registration", "ingest", "tombstone",
})

_LEN = struct.Struct(">I")

# minimal required payload fields per kind
_REQUIRED = {
    "exposure": ("post_id", "global_position"),
    "engagement": ("kind",),
    "survey_response": ("card_id", "answer"),
    "action": ("action",),
    "rerank": ("status",),
    "ingest": (),
    "registration": (),
    "tombstone": (),
}


class _Done(threading.Event):
    """Completion signal for one enqueued batch; carries any write error."""

    error: Exception | None = None


@dataclass(frozen=True)
class EventRecord:
    offset: int
    kind: str
    participant_id: str
    payload: dict
    server_received_at: int


class EventLog:
    """Single-writer append-only log; concurrent readers at any offset."""

    def __init__(self, directory, clock=None, max_records: int | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._clock = clock or (lambda: int(datetime.now(timezone.utc).timestamp() * 1000))
        self._lock = threading.Lock()
        self._max_records = max_records
        self._count = 0
        self._tombstoned: set[str] = set()
        for _, rec in self._iter_raw():
            self._count += 1
            if rec["kind"] == "tombstone":
                self._tombstoned.add(rec["participant_id"])
        # All writes funnel through one group-commit writer thread so that a
        # slow fsync stalls only the writers that asked to wait for it.
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._writer: threading.Thread | None = None
        self._pending = 0
        self._drained = threading.Condition(self._lock)

    # -- segment plumbing ---------------------------------------------------

    def _segments(self):
        return sorted(self.directory.glob("events-*.log"))

    def _segment_for(self, received_at_ms: int) -> Path:
        day = datetime.fromtimestamp(received_at_ms / 1000.0, timezone.utc).strftime("%Y%m%d")
        return self.directory / f"events-{day}.log"

    def _iter_raw(self):
        offset = 0
        for seg in self._segments():
            with seg.open("rb") as f:
                while True:
                    header = f.read(4)
                    if len(header) < 4:
                        break
                    (length,) = _LEN.unpack(header)
                    body = f.read(length)
                    crc_bytes = f.read(4)
                    if len(body) < length or len(crc_bytes) < 4:
                        break  # torn tail write: ignore the unacknowledged record
                    (crc,) = _LEN.unpack(crc_bytes)
                    if zlib.crc32(body) != crc:
                        break
                    yield offset, json.loads(body.decode("utf-8"))
                    offset += 1

    # -- public API ---------------------------------------------------------

    def _validate(self, kind: str, participant_id: str, payload: dict):
        if kind not in RECORD_KINDS:
            raise SchemaViolation(f"unknown record kind: {kind!r}")
        if not isinstance(participant_id, str) or not participant_id:
            raise SchemaViolation("participant_id must be a non-empty string")
        if not isinstance(payload, dict):
            raise SchemaViolation("payload must be an object")
        for field_name in _REQUIRED[kind]:
            if field_name not in payload:
                raise SchemaViolation(f"{kind} record missing field {field_name!r}")

    def _encode(self, kind: str, participant_id: str, payload: dict,
                received: int) -> bytes:
        self._validate(kind, participant_id, payload)
        record = {"kind": kind, "participant_id": participant_id,
                  "payload": payload, "server_received_at": received}
        try:
            return json.dumps(record, ensure_ascii=False).encode("utf-8")
        except (TypeError, ValueError) as e:
            raise SchemaViolation(f"payload not JSON-serializable: {e}") from e

    def append(self, kind: str, participant_id: str, payload: dict) -> int:
        """Durably append one record; returns its offset."""
        return self.append_batch([(kind, participant_id, payload)])[0]

    def append_batch(self, records) -> list[int]:
        """Group-commit several records with a single fsync; returns offsets.

        Either the whole batch is validated, written, and synced before the
        offsets are returned (the ack), or nothing is acknowledged.
        """
        offsets, done = self._enqueue(records, wait=True)
        done.wait()
        if done.error is not None:
            raise done.error
        return offsets

    def append_batch_nowait(self, records) -> list[int]:
        """Validate and sequence a batch now; commit it durably in the background.

        For write paths that emit no acknowledgment to any client. The records
        are visible to scan() (which waits for the writer to drain) but the
        caller does not block on the fsync.
        """
        offsets, _done = self._enqueue(records, wait=False)
        return offsets

    def _enqueue(self, records, wait: bool):
        received = self._clock()
        if wait:
            # encode up front so a SchemaViolation raises to the caller
            items = [self._encode(kind, participant_id, payload, received)
                     for kind, participant_id, payload in records]
        else:
            # validate now, serialize on the writer thread off the hot path
            items = []
            for kind, participant_id, payload in records:
                self._validate(kind, participant_id, payload)
                items.append({"kind": kind, "participant_id": participant_id,
                              "payload": payload, "server_received_at": received})
        done = _Done() if wait else None
        if not items:
            if done:
                done.set()
            return [], done
        with self._lock:
            if self._max_records is not None \
                    and self._count + len(items) > self._max_records:
                raise StorageFull(f"log capped at {self._max_records} records")
            offsets = list(range(self._count, self._count + len(items)))
            self._count += len(items)
            self._pending += 1
            for kind, participant_id, _payload in records:
                if kind == "tombstone":
                    self._tombstoned.add(participant_id)
            if self._writer is None:
                self._writer = threading.Thread(target=self._write_loop,
                                                daemon=True)
                self._writer.start()
        self._queue.put((self._segment_for(received), items, done))
        return offsets, done

    def _write_loop(self):
        while True:
            batches = [self._queue.get()]
            while True:  # opportunistic group commit of whatever has piled up
                try:
                    batches.append(self._queue.get_nowait())
                except queue.Empty:
                    break
            error = None
            try:
                touched: dict = {}
                for seg, items, _done in batches:
                    touched.setdefault(seg, []).extend(items)
                for seg, items in touched.items():
                    with seg.open("ab") as f:
                        for item in items:
                            body = item if isinstance(item, bytes) else \
                                json.dumps(item, ensure_ascii=False,
                                           default=repr).encode("utf-8")
                            f.write(_LEN.pack(len(body)))
                            f.write(body)
                            f.write(_LEN.pack(zlib.crc32(body)))
                        f.flush()
                        os.fsync(f.fileno())
            except OSError as e:
                error = e
            for _seg, _bodies, done in batches:
                if done is not None:
                    done.error = error
                    done.set()
            with self._lock:
                self._pending -= len(batches)
                if self._pending == 0:
                    self._drained.notify_all()

    def flush(self):
        """Block until every enqueued record is durably on disk."""
        with self._lock:
            while self._pending:
                self._drained.wait()

    def scan(self, from_offset: int = 0, kind: str | None = None,
             participant_id: str | None = None, include_tombstoned: bool = False):
        """Yield EventRecord in offset order, filtered by kind/participant."""
        if from_offset < 0:
            raise ValueError("from_offset must be >= 0")
        self.flush()
        for offset, rec in self._iter_raw():
            if offset < from_offset:
                continue
            if kind is not None and rec["kind"] != kind:
                continue
            if participant_id is not None and rec["participant_id"] != participant_id:
                continue
            if not include_tombstoned and rec["participant_id"] in self._tombstoned \
                    and rec["kind"] != "tombstone":
                continue
            yield EventRecord(offset=offset, kind=rec["kind"],
                              participant_id=rec["participant_id"],
                              payload=rec["payload"],
                              server_received_at=rec["server_received_at"])

    def withdraw(self, participant_id: str) -> int:
        """Tombstone every record of a participant; reports exclude them from now on."""
        return self.append("tombstone", participant_id, {})

    def compact(self):
        """Physically erase tombstoned participants' records, segment by segment."""
        self.flush()
        with self._lock:
            for seg in self._segments():
                kept = []
                with seg.open("rb") as f:
                    while True:
                        header = f.read(4)
                        if len(header) < 4:
                            break
                        (length,) = _LEN.unpack(header)
                        body = f.read(length)
                        crc_bytes = f.read(4)
                        if len(body) < length or len(crc_bytes) < 4:
                            break
                        rec = json.loads(body.decode("utf-8"))
                        if rec["participant_id"] in self._tombstoned:
                            continue
                        kept.append((header, body, crc_bytes))
                tmp = seg.with_suffix(".tmp")
                with tmp.open("wb") as f:
                    for header, body, crc_bytes in kept:
                        f.write(header + body + crc_bytes)
                    f.flush()
                    os.fsync(f.fileno())
                tmp.replace(seg)
            self._count = sum(1 for _ in self._iter_raw())

    def __len__(self):
        return self._count


class Registry:
    """Registration/participant snapshot persisted as one JSON document."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data = {"registrations": {}, "participants": {}}
        if self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    def get(self, section: str, key: str):
        with self._lock:
            value = self._data[section].get(key)
            return json.loads(json.dumps(value)) if value is not None else None

    def put(self, section: str, key: str, value: dict):
        with self._lock:
            self._data[section][key] = value
            self._flush()

    def items(self, section: str):
        with self._lock:
            return [(k, json.loads(json.dumps(v))) for k, v in self._data[section].items()]

    def _flush(self):
        tmp = self.path.with_suffix(".tmp")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(self._data, indent=1, sort_keys=True), encoding="utf-8")
        tmp.replace(self.path)
